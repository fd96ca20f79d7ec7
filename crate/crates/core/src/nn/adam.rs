use super::{ParamId, ParamSet, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are kept per parameter tensor in the
/// order of the [`ParamSet`] they were created for.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    cfg: AdamConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: AdamConfig, params: &ParamSet<T>) -> Result<Self> {
        if !(cfg.lr > 0.0) {
            return Err(Error::Parameter(format!(
                "learning rate {} must be positive",
                cfg.lr
            )));
        }
        let zeros = || -> Vec<Vec<T>> {
            params
                .iter()
                .map(|p| vec![T::zero(); p.value.len()])
                .collect()
        };
        Ok(Self {
            cfg,
            step: 0,
            m: zeros(),
            v: zeros(),
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    /// Applies one update. `grads[i]` belongs to the i-th parameter; `None`
    /// is treated as a zero gradient.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &[Option<Tensor<T>>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Shape(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let lr_t = self.cfg.lr * (1.0 - b2.powi(t)).sqrt() / (1.0 - b1.powi(t));
        let (b1, b2) = (T::of(b1), T::of(b2));
        let (lr_t, eps) = (T::of(lr_t), T::of(self.cfg.eps));
        // eps is applied to the bias-corrected second moment.
        let eps_hat = eps * T::of((1.0 - self.cfg.beta2.powi(t)).sqrt());

        for (i, (param, grad)) in params.iter_mut().zip(grads).enumerate() {
            let Some(grad) = grad else { continue };
            if grad.shape() != param.value.shape() {
                return Err(Error::Shape(format!(
                    "gradient {:?} for parameter {} of shape {:?}",
                    grad.shape(),
                    param.name,
                    param.value.shape()
                )));
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((p, &g), m), v) in param
                .value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                *p = *p - lr_t * *m / (v.sqrt() + eps_hat);
            }
        }
        Ok(())
    }

    /// Reorders the moments of one parameter, e.g. after its entries were
    /// sorted: new entry `k` takes the state of old entry `perm[k]`.
    pub fn permute(&mut self, id: ParamId, perm: &[usize]) {
        let i = id.index();
        self.m[i] = perm.iter().map(|&k| self.m[i][k]).collect();
        self.v[i] = perm.iter().map(|&k| self.v[i][k]).collect();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(values: Vec<f64>) -> (ParamSet<f64>, ParamId) {
        let mut ps = ParamSet::new();
        let id = ps.add("p", Tensor::column(values));
        (ps, id)
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        for g in [0.05, 0.3, 250.0, -4.0] {
            let (mut ps, id) = single(vec![1.0, -2.0]);
            let mut adam = Adam::new(AdamConfig::default(), &ps).unwrap();
            adam.step(&mut ps, &[Some(Tensor::column(vec![g, g]))]).unwrap();
            for (after, before) in ps.get(id).data().iter().zip([1.0, -2.0]) {
                let delta = (after - before).abs();
                assert!((delta / 1e-4 - 1.0).abs() < 1e-6, "g={g} delta={delta}");
            }
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let (mut ps, id) = single(vec![0.5, 0.25]);
        let mut adam = Adam::new(AdamConfig::default(), &ps).unwrap();
        for _ in 0..100 {
            adam.step(&mut ps, &[Some(Tensor::column(vec![0.0, 0.0]))]).unwrap();
        }
        assert_eq!(ps.get(id).data(), &[0.5, 0.25]);
    }

    #[test]
    fn non_positive_lr_is_rejected() {
        let (ps, _) = single(vec![0.0]);
        let cfg = AdamConfig {
            lr: 0.0,
            ..AdamConfig::default()
        };
        assert!(Adam::new(cfg, &ps).is_err());
    }

    #[test]
    fn minimises_a_quadratic() {
        let (mut ps, id) = single(vec![3.0]);
        let cfg = AdamConfig {
            lr: 0.05,
            ..AdamConfig::default()
        };
        let mut adam = Adam::new(cfg, &ps).unwrap();
        for _ in 0..2000 {
            let x = ps.get(id).data()[0];
            adam.step(&mut ps, &[Some(Tensor::column(vec![2.0 * (x - 1.0)]))]).unwrap();
        }
        assert!((ps.get(id).data()[0] - 1.0).abs() < 1e-3);
    }
}
