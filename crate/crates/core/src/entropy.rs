//! Empirical code entropy, bitrate conversion and the bitrate penalty.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Assignment counts for one band's codebook.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeStats {
    pub counts: Vec<u64>,
    pub total: u64,
}

impl CodeStats {
    pub fn empty(symbols: usize) -> Self {
        Self {
            counts: vec![0; symbols],
            total: 0,
        }
    }

    pub fn add(&mut self, indices: &[u32]) -> Result<()> {
        let j = self.counts.len();
        for &i in indices {
            let i = i as usize;
            if i >= j {
                return Err(Error::CorruptCode {
                    index: i,
                    symbols: j,
                });
            }
            self.counts[i] += 1;
        }
        self.total += indices.len() as u64;
        Ok(())
    }

    /// Merges counts gathered elsewhere.
    pub fn merge(&mut self, other: &CodeStats) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
    }

    pub fn probabilities(&self) -> Vec<f64> {
        if self.total == 0 {
            return vec![0.0; self.counts.len()];
        }
        let n = self.total as f64;
        self.counts.iter().map(|&c| c as f64 / n).collect()
    }

    pub fn entropy_bits(&self) -> f64 {
        entropy_bits(&self.probabilities())
    }
}

/// Tallies hard indices from any number of frames.
pub fn histogram<'a>(frames: impl IntoIterator<Item = &'a [u32]>, symbols: usize) -> Result<CodeStats> {
    let mut stats = CodeStats::empty(symbols);
    for f in frames {
        stats.add(f)?;
    }
    if stats.total == 0 {
        return Err(Error::NoObservations);
    }
    Ok(stats)
}

/// `-sum p log2 p` with `0 log 0 = 0`.
pub fn entropy_bits(p: &[f64]) -> f64 {
    let h: f64 = p.iter().filter(|&&q| q > 0.0).map(|&q| -q * q.log2()).sum();
    h.max(0.0)
}

/// `F I H` in bits per second.
pub fn bitrate(entropy: f64, code_dim: usize, frame_rate: f64) -> f64 {
    frame_rate * code_dim as f64 * entropy
}

pub fn aggregate(rates: &[f64]) -> f64 {
    rates.iter().sum()
}

/// Frame rate and per-band code dimensions that convert entropies to rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BitrateContext {
    pub frame_rate: f64,
    pub code_dim_cb: usize,
    pub code_dim_hb: usize,
}

impl BitrateContext {
    /// Frames advance by `frame_length - overlap` samples.
    pub fn new(sample_rate: u32, frame_length: usize, overlap: usize, ds_factor: usize) -> Result<Self> {
        if frame_length <= overlap || ds_factor == 0 || frame_length % ds_factor != 0 {
            return Err(Error::Config(format!(
                "no bitrate context for frame {frame_length}, overlap {overlap}, factor {ds_factor}"
            )));
        }
        Ok(Self {
            frame_rate: sample_rate as f64 / (frame_length - overlap) as f64,
            code_dim_cb: frame_length / ds_factor,
            code_dim_hb: frame_length,
        })
    }

    pub fn rate_cb(&self, entropy: f64) -> f64 {
        bitrate(entropy, self.code_dim_cb, self.frame_rate)
    }

    pub fn rate_hb(&self, entropy: f64) -> f64 {
        bitrate(entropy, self.code_dim_hb, self.frame_rate)
    }
}

/// Whether bitrate targets apply per band or to the sum of both bands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateMode {
    PerBand,
    Total,
}

/// Target bitrates in bits per second.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RateTargets {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cb: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hb: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total: Option<f64>,
}

impl RateTargets {
    pub fn per_band(cb: f64, hb: f64) -> Self {
        Self {
            cb: Some(cb),
            hb: Some(hb),
            total: None,
        }
    }

    pub fn total(total: f64) -> Self {
        Self {
            cb: None,
            hb: None,
            total: Some(total),
        }
    }

    pub fn validate(&self, mode: RateMode) -> Result<()> {
        let missing = match mode {
            RateMode::PerBand => self.cb.is_none() || self.hb.is_none(),
            RateMode::Total => self.total.is_none(),
        };
        if missing {
            return Err(Error::Config(format!(
                "rate mode {mode:?} needs its targets, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// `lambda * sum_b |B_b - rate_b|` (per band) or
/// `lambda * |B_total - (rate_cb + rate_hb)|`.
pub fn bitrate_loss(
    mode: RateMode,
    rate_cb: f64,
    rate_hb: f64,
    targets: &RateTargets,
    lambda: f64,
) -> Result<f64> {
    targets.validate(mode)?;
    let dev = match mode {
        RateMode::PerBand => {
            (targets.cb.unwrap_or_default() - rate_cb).abs()
                + (targets.hb.unwrap_or_default() - rate_hb).abs()
        }
        RateMode::Total => (targets.total.unwrap_or_default() - (rate_cb + rate_hb)).abs(),
    };
    Ok(lambda * dev)
}

pub const RATE_REPORT_HEADER: &str = "epoch,bitrate_cb,bitrate_hb,entropy_cb,entropy_hb";

pub fn rate_report_line(epoch: usize, rate_cb: f64, rate_hb: f64, h_cb: f64, h_hb: f64) -> String {
    format!("{epoch},{rate_cb:.3},{rate_hb:.3},{h_cb:.6},{h_hb:.6}")
}
