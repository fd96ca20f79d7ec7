//! 1-d convolution kernels on (time x channels) buffers.
//!
//! Each pass is a single GEMM over an overlapping strided view of a
//! zero-padded buffer: row `t` of the im2col matrix is the contiguous slice
//! starting at padded row `t * stride`, so no im2col copy is made.
//!
//! Weights are stored as a `(kernel * c_in) x c_out` matrix with row index
//! `k * c_in + ci`.

use super::scalar::{gemm, MatRef};
use super::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub t_in: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvGeometry {
    pub fn pad(&self) -> usize {
        (self.kernel - 1) / 2
    }

    pub fn t_out(&self) -> usize {
        self.t_in.div_ceil(self.stride)
    }
}

/// Copies `x` (rows x cols) into a buffer with `before` zero rows ahead and
/// enough zero rows after to reach `total_rows`.
fn pad_rows<T: Scalar>(x: &[T], cols: usize, before: usize, total_rows: usize) -> Vec<T> {
    let mut out = vec![T::zero(); total_rows * cols];
    out[before * cols..before * cols + x.len()].copy_from_slice(x);
    out
}

pub(crate) fn forward<T: Scalar>(g: ConvGeometry, x: &[T], weight: &[T], bias: &[T]) -> Vec<T> {
    let t_out = g.t_out();
    let padded = pad_rows(x, g.c_in, g.pad(), g.t_in + g.kernel - 1);
    let mut y: Vec<T> = Vec::with_capacity(t_out * g.c_out);
    for _ in 0..t_out {
        y.extend_from_slice(bias);
    }
    let cols = MatRef {
        data: &padded,
        rows: t_out,
        cols: g.kernel * g.c_in,
        rs: g.stride * g.c_in,
        cs: 1,
    };
    let w = MatRef {
        data: weight,
        rows: g.kernel * g.c_in,
        cols: g.c_out,
        rs: g.c_out,
        cs: 1,
    };
    gemm(T::one(), cols, w, T::one(), &mut y);
    y
}

/// Gradients of weight and bias given the forward input and `dy`.
pub(crate) fn backward_params<T: Scalar>(
    g: ConvGeometry,
    x: &[T],
    dy: &[T],
) -> (Vec<T>, Vec<T>) {
    let t_out = g.t_out();
    let padded = pad_rows(x, g.c_in, g.pad(), g.t_in + g.kernel - 1);
    let cols_t = MatRef {
        data: &padded,
        rows: g.kernel * g.c_in,
        cols: t_out,
        rs: 1,
        cs: g.stride * g.c_in,
    };
    let dy_mat = MatRef {
        data: dy,
        rows: t_out,
        cols: g.c_out,
        rs: g.c_out,
        cs: 1,
    };
    let mut dw = vec![T::zero(); g.kernel * g.c_in * g.c_out];
    gemm(T::one(), cols_t, dy_mat, T::zero(), &mut dw);

    let mut db = vec![T::zero(); g.c_out];
    for row in dy.chunks_exact(g.c_out) {
        for (b, &v) in db.iter_mut().zip(row) {
            *b = *b + v;
        }
    }
    (dw, db)
}

/// Gradient with respect to the input: a stride-1 correlation of the
/// stride-dilated, padded `dy` with the flipped, transposed kernel.
pub(crate) fn backward_input<T: Scalar>(g: ConvGeometry, weight: &[T], dy: &[T]) -> Vec<T> {
    let pad = g.pad();
    let rows = g.t_in + g.kernel - 1;
    let mut dilated = vec![T::zero(); rows * g.c_out];
    for (t, src) in dy.chunks_exact(g.c_out).enumerate() {
        let r = pad + t * g.stride;
        dilated[r * g.c_out..(r + 1) * g.c_out].copy_from_slice(src);
    }

    // flipped[(k' * c_out + co), ci] = weight[((K-1-k') * c_in + ci), co]
    let mut flipped = vec![T::zero(); g.kernel * g.c_out * g.c_in];
    for kp in 0..g.kernel {
        let k = g.kernel - 1 - kp;
        for ci in 0..g.c_in {
            for co in 0..g.c_out {
                flipped[(kp * g.c_out + co) * g.c_in + ci] = weight[(k * g.c_in + ci) * g.c_out + co];
            }
        }
    }

    let cols = MatRef {
        data: &dilated,
        rows: g.t_in,
        cols: g.kernel * g.c_out,
        rs: g.c_out,
        cs: 1,
    };
    let w = MatRef {
        data: &flipped,
        rows: g.kernel * g.c_out,
        cols: g.c_in,
        rs: g.c_in,
        cs: 1,
    };
    let mut dx = vec![T::zero(); g.t_in * g.c_in];
    gemm(T::one(), cols, w, T::zero(), &mut dx);
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct-loop oracle for the forward pass.
    fn naive<T: Scalar>(g: ConvGeometry, x: &[T], w: &[T], b: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); g.t_out() * g.c_out];
        for t in 0..g.t_out() {
            for co in 0..g.c_out {
                let mut acc = b[co];
                for k in 0..g.kernel {
                    let src = (t * g.stride + k) as isize - g.pad() as isize;
                    if src < 0 || src >= g.t_in as isize {
                        continue;
                    }
                    for ci in 0..g.c_in {
                        acc = acc + x[src as usize * g.c_in + ci] * w[(k * g.c_in + ci) * g.c_out + co];
                    }
                }
                y[t * g.c_out + co] = acc;
            }
        }
        y
    }

    fn ramp(n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|i| ((i * 7919 % 113) as f64 / 113.0 - 0.5) * scale).collect()
    }

    #[test]
    fn gemm_forward_matches_direct_loops() {
        for &(t_in, c_in, c_out, kernel, stride) in
            &[(9, 2, 3, 3, 1), (8, 3, 2, 5, 2), (7, 1, 4, 5, 2), (16, 4, 4, 15, 1)]
        {
            let g = ConvGeometry {
                t_in,
                c_in,
                c_out,
                kernel,
                stride,
            };
            let x = ramp(t_in * c_in, 1.0);
            let w = ramp(kernel * c_in * c_out, 0.3);
            let b = ramp(c_out, 0.1);
            let fast = forward(g, &x, &w, &b);
            let slow = naive(g, &x, &w, &b);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn strided_output_length_is_ceiling() {
        let g = ConvGeometry {
            t_in: 8,
            c_in: 1,
            c_out: 1,
            kernel: 3,
            stride: 2,
        };
        assert_eq!(forward(g, &[1.0f64; 8], &[0.0; 3], &[0.0]).len(), 4);
    }

    #[test]
    fn delta_kernel_is_identity() {
        let g = ConvGeometry {
            t_in: 6,
            c_in: 1,
            c_out: 1,
            kernel: 5,
            stride: 1,
        };
        let x = vec![0.5, -1.0, 2.0, 0.25, 3.0, -0.75];
        let y = forward(g, &x, &[0.0, 0.0, 1.0, 0.0, 0.0], &[0.0]);
        assert_eq!(y, x);
    }
}
