//! AVX2/FMA kernel for `C (m x n) <- A B [+ C]` when `n` is small and `m`
//! large, the shape of every conv pass at these channel counts. Generic GEMM
//! spends most of its time packing the tall operand in that case.

/// Returns `false` without touching `c` when the CPU lacks AVX2/FMA or
/// `n < 8`, so the caller can fall back.
///
/// `a` is `m x k` with strides `rsa` and `csa`; `b` is a
/// contiguous row-major `k x n` matrix and `c` a contiguous `m x n` one.
pub(crate) fn gemm_f32(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    rsa: usize,
    csa: usize,
    b: &[f32],
    c: &mut [f32],
    accumulate: bool,
) -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        if n >= 8 && is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma") {
            assert!(m == 0 || k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len(), "narrow gemm: a out of bounds");
            assert!(b.len() >= k * n && c.len() >= m * n, "narrow gemm: b or c out of bounds");
            // SAFETY: features detected above; bounds asserted.
            unsafe { avx2::gemm(m, k, n, a.as_ptr(), rsa, csa, b.as_ptr(), c.as_mut_ptr(), accumulate) };
            return true;
        }
    }
    let _ = (m, k, n, a, rsa, csa, b, c, accumulate);
    false
}

#[cfg(target_arch = "x86_64")]
mod avx2 {
    use std::arch::x86_64::*;

    const ROWS: usize = 4;

    #[target_feature(enable = "avx2,fma")]
    #[allow(clippy::too_many_arguments)]
    pub unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const f32,
        rsa: usize,
        csa: usize,
        b: *const f32,
        c: *mut f32,
        accumulate: bool,
    ) {
        let mut j = 0;
        while j + 16 <= n {
            columns::<2>(m, k, n, a, rsa, csa, b.add(j), c.add(j), accumulate);
            j += 16;
        }
        if j + 8 <= n {
            columns::<1>(m, k, n, a, rsa, csa, b.add(j), c.add(j), accumulate);
            j += 8;
        }
        for col in j..n {
            for i in 0..m {
                let mut s = if accumulate { *c.add(i * n + col) } else { 0.0 };
                for p in 0..k {
                    s += *a.add(i * rsa + p * csa) * *b.add(p * n + col);
                }
                *c.add(i * n + col) = s;
            }
        }
    }

    /// One strip of `8 * NV` output columns.
    #[target_feature(enable = "avx2,fma")]
    #[allow(clippy::too_many_arguments)]
    unsafe fn columns<const NV: usize>(
        m: usize,
        k: usize,
        n: usize,
        a: *const f32,
        rsa: usize,
        csa: usize,
        b: *const f32,
        c: *mut f32,
        accumulate: bool,
    ) {
        let mut i = 0;
        while i + ROWS <= m {
            block::<ROWS, NV>(k, n, a.add(i * rsa), rsa, csa, b, c.add(i * n), accumulate);
            i += ROWS;
        }
        while i < m {
            block::<1, NV>(k, n, a.add(i * rsa), rsa, csa, b, c.add(i * n), accumulate);
            i += 1;
        }
    }

    #[target_feature(enable = "avx2,fma")]
    #[inline]
    #[allow(clippy::too_many_arguments)]
    unsafe fn block<const R: usize, const NV: usize>(
        k: usize,
        n: usize,
        a: *const f32,
        rsa: usize,
        csa: usize,
        b: *const f32,
        c: *mut f32,
        accumulate: bool,
    ) {
        let mut acc = [[_mm256_setzero_ps(); NV]; R];
        if accumulate {
            for (r, row) in acc.iter_mut().enumerate() {
                for (v, x) in row.iter_mut().enumerate() {
                    *x = _mm256_loadu_ps(c.add(r * n + v * 8));
                }
            }
        }
        for p in 0..k {
            let mut bv = [_mm256_setzero_ps(); NV];
            for (v, x) in bv.iter_mut().enumerate() {
                *x = _mm256_loadu_ps(b.add(p * n + v * 8));
            }
            for (r, row) in acc.iter_mut().enumerate() {
                let av = _mm256_broadcast_ss(&*a.add(r * rsa + p * csa));
                for (x, &bvv) in row.iter_mut().zip(&bv) {
                    *x = _mm256_fmadd_ps(av, bvv, *x);
                }
            }
        }
        for (r, row) in acc.iter().enumerate() {
            for (v, x) in row.iter().enumerate() {
                _mm256_storeu_ps(c.add(r * n + v * 8), *x);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_reference_product() {
        for &(m, k, n, rsa, csa) in &[(13, 7, 8, 7, 1), (9, 30, 25, 3, 1), (64, 240, 16, 16, 1), (5, 1, 40, 1, 1), (11, 20, 16, 1, 12)] {
            let a: Vec<f32> = (0..(m - 1) * rsa + (k - 1) * csa + 1).map(|i| ((i * 37 % 101) as f32 / 101.0) - 0.5).collect();
            let b: Vec<f32> = (0..k * n).map(|i| ((i * 53 % 97) as f32 / 97.0) - 0.5).collect();
            for accumulate in [false, true] {
                let init: Vec<f32> = (0..m * n).map(|i| i as f32 * 0.01).collect();
                let mut c = init.clone();
                if !gemm_f32(m, k, n, &a, rsa, csa, &b, &mut c, accumulate) {
                    return;
                }
                for i in 0..m {
                    for j in 0..n {
                        let mut s = if accumulate { init[i * n + j] as f64 } else { 0.0 };
                        for p in 0..k {
                            s += a[i * rsa + p * csa] as f64 * b[p * n + j] as f64;
                        }
                        assert!((c[i * n + j] as f64 - s).abs() < 1e-4, "{m}x{k}x{n} at ({i},{j})");
                    }
                }
            }
        }
    }
}
