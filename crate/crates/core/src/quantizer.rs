//! Learned-centroid scalar quantization.
//!
//! Training uses the soft assignment `softmax(-alpha |z_i - c_j|)`; inference
//! snaps each code value to its nearest centroid. Each band owns its own
//! codebook.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Cb,
    Hb,
}

impl Band {
    pub const ALL: [Band; 2] = [Band::Cb, Band::Hb];

    pub fn name(self) -> &'static str {
        match self {
            Band::Cb => "cb",
            Band::Hb => "hb",
        }
    }
}

/// Sorted set of scalar centroids for one band.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub band: Band,
    centroids: Vec<f64>,
}

impl Codebook {
    pub fn new(band: Band, mut centroids: Vec<f64>) -> Result<Self> {
        if centroids.len() < 2 {
            return Err(Error::DegenerateCodebook(format!(
                "{} centroids, need at least 2",
                centroids.len()
            )));
        }
        if centroids.iter().any(|c| !c.is_finite()) {
            return Err(Error::DegenerateCodebook("non-finite centroid".into()));
        }
        centroids.sort_by(f64::total_cmp);
        Ok(Self { band, centroids })
    }

    pub fn centroids(&self) -> &[f64] {
        &self.centroids
    }

    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }
}

/// Geometric temperature schedule, clamped at `alpha_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnealSchedule {
    pub alpha0: f64,
    pub growth: f64,
    pub alpha_max: f64,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        Self {
            alpha0: 1.0,
            growth: 1.15,
            alpha_max: 1e4,
        }
    }
}

impl AnnealSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha0 > 0.0) || !(self.growth >= 1.0) || !(self.alpha_max >= self.alpha0) {
            return Err(Error::Config(format!("invalid annealing schedule {self:?}")));
        }
        Ok(())
    }

    pub fn alpha(&self, epoch: usize) -> f64 {
        let exp = i32::try_from(epoch).unwrap_or(i32::MAX);
        (self.alpha0 * self.growth.powi(exp)).min(self.alpha_max)
    }
}

/// `D[i, j] = |z_i - c_j|` as an I x J tensor.
pub fn distance_matrix<T: Scalar>(z: &[T], c: &[T]) -> Tensor<T> {
    let data = z
        .iter()
        .flat_map(|&zi| c.iter().map(move |&cj| (zi - cj).abs()))
        .collect();
    Tensor::from_vec(z.len(), c.len(), data).expect("shape by construction")
}

/// Row-wise `softmax(-alpha D)`.
pub fn soft_assign<T: Scalar>(d: &Tensor<T>, alpha: T) -> Result<Tensor<T>> {
    if !(alpha > T::zero()) {
        return Err(Error::Parameter("temperature must be positive".into()));
    }
    let mut out = Vec::with_capacity(d.len());
    for r in 0..d.rows() {
        let row = d.row(r);
        let min = row.iter().copied().fold(T::infinity(), T::min);
        let exps: Vec<T> = row.iter().map(|&v| (-alpha * (v - min)).exp()).collect();
        let sum: T = exps.iter().copied().sum();
        out.extend(exps.into_iter().map(|e| e / sum));
    }
    Tensor::from_vec(d.rows(), d.cols(), out)
}

/// `A_soft c`.
pub fn soft_quantize<T: Scalar>(z: &[T], c: &[T], alpha: T) -> Result<Vec<T>> {
    let a = soft_assign(&distance_matrix(z, c), alpha)?;
    Ok((0..a.rows())
        .map(|i| a.row(i).iter().zip(c).map(|(&p, &v)| p * v).sum())
        .collect())
}

/// Index of the nearest centroid per row; ties go to the smaller centroid
/// value, independent of storage order.
pub fn hard_assign<T: Scalar>(d: &Tensor<T>, c: &[T]) -> Vec<u32> {
    (0..d.rows())
        .map(|r| {
            let row = d.row(r);
            let mut best = 0;
            for j in 1..row.len() {
                let better = match row[j].partial_cmp(&row[best]) {
                    Some(Ordering::Less) => true,
                    Some(Ordering::Equal) => c[j] < c[best],
                    _ => false,
                };
                if better {
                    best = j;
                }
            }
            best as u32
        })
        .collect()
}

/// Nearest-centroid indices and the snapped values.
pub fn hard_quantize<T: Scalar>(z: &[T], c: &[T]) -> (Vec<u32>, Vec<T>) {
    let idx = hard_assign(&distance_matrix(z, c), c);
    let values = idx.iter().map(|&i| c[i as usize]).collect();
    (idx, values)
}

/// Centroids at the `(j + 1/2) / J` quantiles of a warm-up sample. Falls
/// back to quantiles of the distinct values when the sample is so
/// concentrated that plain quantiles collide.
pub fn init_centroids(band: Band, samples: &[f64], j: usize) -> Result<Codebook> {
    let mut sorted: Vec<f64> = samples.iter().copied().filter(|v| v.is_finite()).collect();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() < j || j < 2 {
        return Err(Error::DegenerateCodebook(format!(
            "{} distinct values for {j} centroids",
            distinct.len()
        )));
    }
    let quantiles = |v: &[f64]| -> Vec<f64> {
        (0..j)
            .map(|k| {
                let pos = (k as f64 + 0.5) / j as f64 * v.len() as f64 - 0.5;
                let lo = pos.floor().max(0.0) as usize;
                let hi = (lo + 1).min(v.len() - 1);
                let frac = (pos - lo as f64).clamp(0.0, 1.0);
                v[lo] + (v[hi] - v[lo]) * frac
            })
            .collect()
    };
    let mut c = quantiles(&sorted);
    if c.windows(2).any(|w| w[0] >= w[1]) {
        c = quantiles(&distinct);
    }
    Codebook::new(band, c)
}
