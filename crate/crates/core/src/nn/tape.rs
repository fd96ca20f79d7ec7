//! Reverse-mode differentiation over a linear tape of tensor operations.
//!
//! Nodes are appended in execution order, so reverse iteration is a valid
//! reverse topological order and each node is visited exactly once.

use rustfft::num_complex::Complex;

use super::conv::{self, ConvGeometry};
use super::{Scalar, Tensor};
use crate::dsp::{self, LogMagnitude, StftConfig, LOG_MAG_EPS, SNR_CAP_DB, SNR_ENERGY_FLOOR};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv1d {
        input: Var,
        weight: Var,
        bias: Var,
        geometry: ConvGeometry,
    },
    LeakyRelu {
        input: Var,
        slope: T,
    },
    Upsample {
        input: Var,
        factor: usize,
    },
    Concat {
        a: Var,
        b: Var,
    },
    SoftAssign {
        z: Var,
        centroids: Var,
        alpha: T,
    },
    Mix {
        assign: Var,
        centroids: Var,
    },
    MeanRows {
        inputs: Vec<Var>,
    },
    EntropyBits {
        p: Var,
    },
    NegSnrDb {
        estimate: Var,
        target: Vec<T>,
        denom: T,
        clamped: bool,
    },
    LogStftL1 {
        estimate: Var,
        target: LogMagnitude<T>,
        spectrum: Vec<Complex<T>>,
        cfg: StftConfig,
    },
    WeightedSum {
        terms: Vec<(Var, T)>,
    },
    AbsDiff {
        input: Var,
        target: T,
    },
    Dot {
        input: Var,
        weights: Tensor<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recorded computation. Build one per training step.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of one scalar with respect to every node that requires them.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn check_same_rows<T: Scalar>(what: &str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.rows() != b.rows() {
        return Err(Error::Shape(format!(
            "{what}: time lengths {} and {} differ",
            a.rows(),
            b.rows()
        )));
    }
    Ok(())
}

fn check_scalar<T: Scalar>(what: &str, t: &Tensor<T>) -> Result<()> {
    if t.shape() != (1, 1) {
        return Err(Error::Shape(format!(
            "{what}: expected a scalar, got {:?}",
            t.shape()
        )));
    }
    Ok(())
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Same-length zero-padded convolution followed by striding.
    /// `weight` is `(kernel * c_in) x c_out`, `bias` is `1 x c_out`.
    pub fn conv1d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        kernel: usize,
        stride: usize,
    ) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(weight);
        let b = self.value(bias);
        if kernel == 0 || kernel % 2 == 0 || stride == 0 {
            return Err(Error::Parameter(format!(
                "conv kernel {kernel} must be odd and stride {stride} positive"
            )));
        }
        if w.rows() != kernel * x.cols() {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {}",
                w.rows() / kernel,
                x.cols()
            )));
        }
        if b.shape() != (1, w.cols()) {
            return Err(Error::Shape(format!(
                "conv bias {:?} for {} output channels",
                b.shape(),
                w.cols()
            )));
        }
        let geometry = ConvGeometry {
            t_in: x.rows(),
            c_in: x.cols(),
            c_out: w.cols(),
            kernel,
            stride,
        };
        let y = conv::forward(geometry, x.data(), w.data(), b.data());
        let value = Tensor::from_vec(geometry.t_out(), geometry.c_out, y)?;
        let rg = self.any_grad(&[input, weight, bias]);
        Ok(self.push(
            value,
            Op::Conv1d {
                input,
                weight,
                bias,
                geometry,
            },
            rg,
        ))
    }

    pub fn leaky_relu(&mut self, input: Var, slope: T) -> Var {
        let value = self
            .value(input)
            .map(|v| if v > T::zero() { v } else { v * slope });
        let rg = self.any_grad(&[input]);
        self.push(value, Op::LeakyRelu { input, slope }, rg)
    }

    /// Nearest-neighbour upsampling along time.
    pub fn upsample(&mut self, input: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(Error::Parameter("upsampling factor must be >= 1".into()));
        }
        let x = self.value(input);
        let (rows, cols) = x.shape();
        let mut out = Vec::with_capacity(rows * factor * cols);
        for r in 0..rows {
            for _ in 0..factor {
                out.extend_from_slice(x.row(r));
            }
        }
        let value = Tensor::from_vec(rows * factor, cols, out)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(value, Op::Upsample { input, factor }, rg))
    }

    /// Channel-wise concatenation `[a, b]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        check_same_rows("concat", ta, tb)?;
        let (rows, ca, cb) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = Vec::with_capacity(rows * (ca + cb));
        for r in 0..rows {
            out.extend_from_slice(ta.row(r));
            out.extend_from_slice(tb.row(r));
        }
        let value = Tensor::from_vec(rows, ca + cb, out)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Concat { a, b }, rg))
    }

    /// Row-wise `softmax(-alpha |z_i - c_j|)` for a code column `z` (I x 1)
    /// and centroid column `c` (J x 1); yields I x J.
    pub fn soft_assign(&mut self, z: Var, centroids: Var, alpha: T) -> Result<Var> {
        if !(alpha > T::zero()) {
            return Err(Error::Parameter("temperature must be positive".into()));
        }
        let (zt, ct) = (self.value(z), self.value(centroids));
        if zt.cols() != 1 || ct.cols() != 1 {
            return Err(Error::Shape("soft assignment expects column vectors".into()));
        }
        let value = soft_assign_values(zt.data(), ct.data(), alpha);
        let value = Tensor::from_vec(zt.rows(), ct.rows(), value)?;
        let rg = self.any_grad(&[z, centroids]);
        Ok(self.push(
            value,
            Op::SoftAssign {
                z,
                centroids,
                alpha,
            },
            rg,
        ))
    }

    /// `A c` for an assignment matrix (I x J) and centroid column (J x 1).
    pub fn mix(&mut self, assign: Var, centroids: Var) -> Result<Var> {
        let (a, c) = (self.value(assign), self.value(centroids));
        if a.cols() != c.rows() || c.cols() != 1 {
            return Err(Error::Shape(format!(
                "mix of {:?} assignments with {:?} centroids",
                a.shape(),
                c.shape()
            )));
        }
        let out = (0..a.rows())
            .map(|i| a.row(i).iter().zip(c.data()).map(|(&p, &v)| p * v).sum())
            .collect();
        let rg = self.any_grad(&[assign, centroids]);
        Ok(self.push(Tensor::column(out), Op::Mix { assign, centroids }, rg))
    }

    /// Mean over every row of every input; inputs share a column count.
    pub fn mean_rows(&mut self, inputs: &[Var]) -> Result<Var> {
        let cols = inputs
            .first()
            .map(|&v| self.value(v).cols())
            .ok_or(Error::NoObservations)?;
        let mut acc = vec![T::zero(); cols];
        let mut rows = 0usize;
        for &v in inputs {
            let t = self.value(v);
            if t.cols() != cols {
                return Err(Error::Shape("mean_rows over mismatched widths".into()));
            }
            rows += t.rows();
            for r in 0..t.rows() {
                for (a, &x) in acc.iter_mut().zip(t.row(r)) {
                    *a = *a + x;
                }
            }
        }
        if rows == 0 {
            return Err(Error::NoObservations);
        }
        let n = T::of(rows as f64);
        acc.iter_mut().for_each(|a| *a = *a / n);
        let rg = self.any_grad(inputs);
        Ok(self.push(
            Tensor::from_vec(1, cols, acc)?,
            Op::MeanRows {
                inputs: inputs.to_vec(),
            },
            rg,
        ))
    }

    /// Shannon entropy in bits of a probability row.
    pub fn entropy_bits(&mut self, p: Var) -> Var {
        let h = self
            .value(p)
            .data()
            .iter()
            .filter(|&&q| q > T::zero())
            .map(|&q| -q * q.log2())
            .sum();
        let rg = self.any_grad(&[p]);
        self.push(Tensor::scalar(h), Op::EntropyBits { p }, rg)
    }

    /// Negative SNR in dB, `10 log10((sum (x - y)^2 + eps) / sum x^2)`,
    /// floored at -100 dB.
    pub fn neg_snr_db(&mut self, estimate: Var, target: &[T]) -> Result<Var> {
        let est = self.value(estimate);
        if est.len() != target.len() {
            return Err(Error::Shape(format!(
                "SNR over {} estimate vs {} target samples",
                est.len(),
                target.len()
            )));
        }
        let signal: T = target.iter().map(|&v| v * v).sum();
        if signal == T::zero() {
            return Err(Error::UndefinedReference);
        }
        let err: T = est
            .data()
            .iter()
            .zip(target)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        let denom = err + T::of(SNR_ENERGY_FLOOR);
        let raw = T::of(10.0) * (denom / signal).log10();
        let floor = T::of(-SNR_CAP_DB);
        let clamped = raw < floor;
        let value = if clamped { floor } else { raw };
        let rg = self.any_grad(&[estimate]);
        Ok(self.push(
            Tensor::scalar(value),
            Op::NegSnrDb {
                estimate,
                target: target.to_vec(),
                denom,
                clamped,
            },
            rg,
        ))
    }

    /// Mean absolute difference between `ln(|STFT(estimate)| + eps)` and a
    /// target log-magnitude spectrogram.
    pub fn log_stft_l1(
        &mut self,
        estimate: Var,
        target: &LogMagnitude<T>,
        cfg: StftConfig,
    ) -> Result<Var> {
        cfg.validate()?;
        let est = self.value(estimate);
        if est.cols() != 1 {
            return Err(Error::Shape("STFT loss expects a single channel".into()));
        }
        let spectrum = dsp::stft::stft(est.data(), &cfg);
        if spectrum.len() != target.data.len() {
            return Err(Error::Shape(format!(
                "STFT loss: {} estimate bins vs {} target bins",
                spectrum.len(),
                target.data.len()
            )));
        }
        let eps = T::of(LOG_MAG_EPS);
        let total: T = spectrum
            .iter()
            .zip(&target.data)
            .map(|(c, &t)| ((c.norm() + eps).ln() - t).abs())
            .sum();
        let value = total / T::of(spectrum.len() as f64);
        let rg = self.any_grad(&[estimate]);
        Ok(self.push(
            Tensor::scalar(value),
            Op::LogStftL1 {
                estimate,
                target: target.clone(),
                spectrum,
                cfg,
            },
            rg,
        ))
    }

    /// `sum_i w_i x_i` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Result<Var> {
        let mut total = T::zero();
        for &(v, w) in terms {
            let t = self.value(v);
            check_scalar("weighted_sum", t)?;
            total = total + w * t.item();
        }
        let vars: Vec<Var> = terms.iter().map(|t| t.0).collect();
        let rg = self.any_grad(&vars);
        Ok(self.push(
            Tensor::scalar(total),
            Op::WeightedSum {
                terms: terms.to_vec(),
            },
            rg,
        ))
    }

    /// `|target - x|` for a scalar node.
    pub fn abs_diff(&mut self, input: Var, target: T) -> Result<Var> {
        let t = self.value(input);
        check_scalar("abs_diff", t)?;
        let value = (target - t.item()).abs();
        let rg = self.any_grad(&[input]);
        Ok(self.push(Tensor::scalar(value), Op::AbsDiff { input, target }, rg))
    }

    /// `sum(weights * x)`, a scalar projection of any tensor.
    pub fn dot(&mut self, input: Var, weights: Tensor<T>) -> Result<Var> {
        let t = self.value(input);
        if t.shape() != weights.shape() {
            return Err(Error::Shape(format!(
                "dot of {:?} with {:?}",
                t.shape(),
                weights.shape()
            )));
        }
        let value = t
            .data()
            .iter()
            .zip(weights.data())
            .map(|(&a, &b)| a * b)
            .sum();
        let rg = self.any_grad(&[input]);
        Ok(self.push(Tensor::scalar(value), Op::Dot { input, weights }, rg))
    }

    /// Back-propagates from the scalar node `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| Error::Tape(format!("node {} is not on this tape", loss.0)))?;
        check_scalar("backward", &root.value)?;

        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads)?;
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, delta: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => g.add_assign(&delta),
            slot => *slot = Some(delta),
        }
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Conv1d {
                input,
                weight,
                bias,
                geometry,
            } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                if self.requires_grad(*weight) || self.requires_grad(*bias) {
                    let (dw, db) = conv::backward_params(*geometry, x.data(), g.data());
                    self.accumulate(grads, *weight, Tensor::from_vec(w.rows(), w.cols(), dw)?);
                    self.accumulate(grads, *bias, Tensor::from_vec(1, geometry.c_out, db)?);
                }
                if self.requires_grad(*input) {
                    let dx = conv::backward_input(*geometry, w.data(), g.data());
                    self.accumulate(grads, *input, Tensor::from_vec(x.rows(), x.cols(), dx)?);
                }
            }
            Op::LeakyRelu { input, slope } => {
                let x = self.value(*input);
                let data = x
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &d)| if v > T::zero() { d } else { d * *slope })
                    .collect();
                self.accumulate(grads, *input, Tensor::from_vec(x.rows(), x.cols(), data)?);
            }
            Op::Upsample { input, factor } => {
                let x = self.value(*input);
                let cols = x.cols();
                let mut dx = vec![T::zero(); x.len()];
                for (r, row) in g.data().chunks_exact(cols).enumerate() {
                    let dst = &mut dx[(r / factor) * cols..(r / factor + 1) * cols];
                    for (a, &b) in dst.iter_mut().zip(row) {
                        *a = *a + b;
                    }
                }
                self.accumulate(grads, *input, Tensor::from_vec(x.rows(), cols, dx)?);
            }
            Op::Concat { a, b } => {
                let ca = self.value(*a).cols();
                let cb = self.value(*b).cols();
                let rows = g.rows();
                let mut da = Vec::with_capacity(rows * ca);
                let mut db = Vec::with_capacity(rows * cb);
                for r in 0..rows {
                    let row = g.row(r);
                    da.extend_from_slice(&row[..ca]);
                    db.extend_from_slice(&row[ca..]);
                }
                self.accumulate(grads, *a, Tensor::from_vec(rows, ca, da)?);
                self.accumulate(grads, *b, Tensor::from_vec(rows, cb, db)?);
            }
            Op::SoftAssign {
                z,
                centroids,
                alpha,
            } => {
                let zt = self.value(*z);
                let ct = self.value(*centroids);
                let a = &node.value;
                let j = ct.rows();
                let mut dz = vec![T::zero(); zt.rows()];
                let mut dc = vec![T::zero(); j];
                for i in 0..zt.rows() {
                    let ai = a.row(i);
                    let gi = g.row(i);
                    let dot: T = ai.iter().zip(gi).map(|(&p, &q)| p * q).sum();
                    let zi = zt.data()[i];
                    for k in 0..j {
                        // ds = dL/d(logit); logit = -alpha |z - c|
                        let ds = ai[k] * (gi[k] - dot);
                        let diff = zi - ct.data()[k];
                        let sign = if diff > T::zero() {
                            T::one()
                        } else if diff < T::zero() {
                            -T::one()
                        } else {
                            T::zero()
                        };
                        dz[i] = dz[i] - ds * *alpha * sign;
                        dc[k] = dc[k] + ds * *alpha * sign;
                    }
                }
                self.accumulate(grads, *z, Tensor::column(dz));
                self.accumulate(grads, *centroids, Tensor::column(dc));
            }
            Op::Mix { assign, centroids } => {
                let a = self.value(*assign);
                let c = self.value(*centroids);
                if self.requires_grad(*assign) {
                    let mut da = Vec::with_capacity(a.len());
                    for &gi in g.data() {
                        da.extend(c.data().iter().map(|&cj| gi * cj));
                    }
                    self.accumulate(grads, *assign, Tensor::from_vec(a.rows(), a.cols(), da)?);
                }
                let mut dc = vec![T::zero(); c.rows()];
                for (i, &gi) in g.data().iter().enumerate() {
                    for (d, &p) in dc.iter_mut().zip(a.row(i)) {
                        *d = *d + gi * p;
                    }
                }
                self.accumulate(grads, *centroids, Tensor::column(dc));
            }
            Op::MeanRows { inputs } => {
                let rows: usize = inputs.iter().map(|&v| self.value(v).rows()).sum();
                let scale = T::one() / T::of(rows as f64);
                let row: Vec<T> = g.data().iter().map(|&d| d * scale).collect();
                for &v in inputs {
                    if !self.requires_grad(v) {
                        continue;
                    }
                    let t = self.value(v);
                    let mut d = Vec::with_capacity(t.len());
                    for _ in 0..t.rows() {
                        d.extend_from_slice(&row);
                    }
                    self.accumulate(grads, v, Tensor::from_vec(t.rows(), t.cols(), d)?);
                }
            }
            Op::EntropyBits { p } => {
                let pt = self.value(*p);
                let gs = g.item();
                let tiny = T::of(1e-30);
                let ln2 = T::of(std::f64::consts::LN_2);
                let d = pt
                    .data()
                    .iter()
                    .map(|&q| -gs * (q.max(tiny).ln() + T::one()) / ln2)
                    .collect();
                self.accumulate(grads, *p, Tensor::from_vec(pt.rows(), pt.cols(), d)?);
            }
            Op::NegSnrDb {
                estimate,
                target,
                denom,
                clamped,
            } => {
                let est = self.value(*estimate);
                let d = if *clamped {
                    vec![T::zero(); est.len()]
                } else {
                    let k = g.item() * T::of(20.0 / std::f64::consts::LN_10) / *denom;
                    est.data()
                        .iter()
                        .zip(target)
                        .map(|(&a, &b)| k * (a - b))
                        .collect()
                };
                self.accumulate(grads, *estimate, Tensor::from_vec(est.rows(), est.cols(), d)?);
            }
            Op::LogStftL1 {
                estimate,
                target,
                spectrum,
                cfg,
            } => {
                let est = self.value(*estimate);
                let eps = T::of(LOG_MAG_EPS);
                let scale = g.item() / T::of(spectrum.len() as f64);
                let grad_spec: Vec<Complex<T>> = spectrum
                    .iter()
                    .zip(&target.data)
                    .map(|(c, &t)| {
                        let mag = c.norm();
                        let diff = (mag + eps).ln() - t;
                        if mag == T::zero() || diff == T::zero() {
                            return Complex::new(T::zero(), T::zero());
                        }
                        let s = if diff > T::zero() { scale } else { -scale };
                        let k = s / ((mag + eps) * mag);
                        Complex::new(c.re * k, c.im * k)
                    })
                    .collect();
                let mut dx = vec![T::zero(); est.len()];
                dsp::stft::stft_adjoint(&grad_spec, cfg, &mut dx);
                self.accumulate(grads, *estimate, Tensor::from_vec(est.rows(), 1, dx)?);
            }
            Op::WeightedSum { terms } => {
                for &(v, w) in terms {
                    self.accumulate(grads, v, Tensor::scalar(g.item() * w));
                }
            }
            Op::AbsDiff { input, target } => {
                let x = self.value(*input).item();
                let s = if x > *target {
                    T::one()
                } else if x < *target {
                    -T::one()
                } else {
                    T::zero()
                };
                self.accumulate(grads, *input, Tensor::scalar(g.item() * s));
            }
            Op::Dot { input, weights } => {
                let gs = g.item();
                self.accumulate(grads, *input, weights.map(|w| w * gs));
            }
        }
        Ok(())
    }
}

/// Row-wise softmax of `-alpha |z_i - c_j|`, stabilised by the row maximum.
pub(crate) fn soft_assign_values<T: Scalar>(z: &[T], c: &[T], alpha: T) -> Vec<T> {
    let j = c.len();
    let mut out = Vec::with_capacity(z.len() * j);
    let mut row = vec![T::zero(); j];
    for &zi in z {
        let mut max = T::neg_infinity();
        for (r, &cj) in row.iter_mut().zip(c) {
            *r = -alpha * (zi - cj).abs();
            max = max.max(*r);
        }
        let mut sum = T::zero();
        for r in row.iter_mut() {
            *r = (*r - max).exp();
            sum = sum + *r;
        }
        out.extend(row.iter().map(|&r| r / sum));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_on_foreign_node_is_a_tape_error() {
        let tape = Tape::<f64>::new();
        assert!(matches!(tape.backward(Var(3)), Err(Error::Tape(_))));
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::column(vec![1.0, 2.0]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn upsample_repeats_and_sums_back() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::column(vec![1.0, 2.0, 3.0]));
        let y = tape.upsample(x, 2).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let loss = tape.dot(y, Tensor::column(vec![1.0; 6])).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn upsample_by_one_is_identity_and_zero_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::column(vec![4.0, 5.0]));
        let y = tape.upsample(x, 1).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
        assert!(tape.upsample(x, 0).is_err());
    }

    #[test]
    fn concat_shapes() {
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::zeros(16_384, 50));
        let b = tape.constant(Tensor::zeros(16_384, 50));
        let c = tape.concat(a, b).unwrap();
        assert_eq!(tape.value(c).shape(), (16_384, 100));
        let short = tape.constant(Tensor::zeros(7, 3));
        let long = tape.constant(Tensor::zeros(8, 3));
        assert!(matches!(tape.concat(long, short), Err(Error::Shape(_))));
    }

    #[test]
    fn concat_with_zeros_then_slice_back() {
        let mut tape = Tape::<f64>::new();
        let data = Tensor::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let a = tape.constant(data.clone());
        let z = tape.constant(Tensor::zeros(3, 4));
        let c = tape.concat(a, z).unwrap();
        let v = tape.value(c);
        let sliced: Vec<f64> = (0..3).flat_map(|r| v.row(r)[..2].to_vec()).collect();
        assert_eq!(sliced, data.data());
    }

    #[test]
    fn leaky_relu_values() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::column(vec![-1.0, 2.0]));
        let y = tape.leaky_relu(x, 0.01);
        assert_eq!(tape.value(y).data(), &[-0.01, 2.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_conv_gradients() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::from_vec(5, 2, (0..10).map(|v| v as f64 * 0.1).collect()).unwrap());
        let w = tape.param(Tensor::from_vec(6, 1, vec![0.3; 6]).unwrap());
        let b = tape.param(Tensor::scalar(0.1));
        let y = tape.conv1d(x, w, b, 3, 1).unwrap();
        let loss = tape.dot(y, Tensor::zeros(5, 1)).unwrap();
        let grads = tape.backward(loss).unwrap();
        for v in [x, w, b] {
            assert!(grads.get(v).unwrap().data().iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn strided_conv_input_gradient_matches_input_shape() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::zeros(9, 3));
        let w = tape.param(Tensor::zeros(15, 2));
        let b = tape.param(Tensor::zeros(1, 2));
        let y = tape.conv1d(x, w, b, 5, 2).unwrap();
        assert_eq!(tape.value(y).shape(), (5, 2));
        let loss = tape.dot(y, Tensor::zeros(5, 2)).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().shape(), (9, 3));
    }

    #[test]
    fn conv_channel_mismatch_is_shape_error() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(8, 3));
        let w = tape.param(Tensor::zeros(10, 1));
        let b = tape.param(Tensor::zeros(1, 1));
        assert!(matches!(tape.conv1d(x, w, b, 5, 1), Err(Error::Shape(_))));
    }

    #[test]
    fn soft_assign_rows_are_stochastic() {
        let mut tape = Tape::<f64>::new();
        let z = tape.constant(Tensor::column(vec![0.0, 0.3, -2.0, 5.0]));
        let c = tape.constant(Tensor::column(vec![-1.0, 0.0, 1.0]));
        let a = tape.soft_assign(z, c, 3.0).unwrap();
        let v = tape.value(a);
        for r in 0..4 {
            assert!((v.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(tape.soft_assign(z, c, 0.0).is_err());
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::column(vec![1.0, 2.0]));
        let p = tape.param(Tensor::column(vec![3.0, 4.0]));
        let c = tape.concat(x, p).unwrap();
        let loss = tape.dot(c, Tensor::from_vec(2, 2, vec![1.0; 4]).unwrap()).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(x).is_none());
        assert_eq!(grads.get(p).unwrap().data(), &[1.0, 1.0]);
    }
}
