//! Signal-domain building blocks: framing with cross-fades, FIR band
//! splitting, interpolation, log-magnitude STFT and SNR.
//!
//! All functions here are pure; signals are carried in `f64`.

mod fir;
mod framing;
mod metrics;
pub(crate) mod stft;

pub use fir::{
    design_fir, filter_same, resample, split_bands, upsample_interp, BandPair, BandSplitConfig,
    FilterKind, FirFilter,
};
pub use framing::{frame_count, frame_signal, overlap_add, FrameSet};
pub use metrics::{snr_db, SNR_CAP_DB, SNR_ENERGY_FLOOR};
pub use stft::{
    hann_periodic, log_mag_stft, stft_frame_count, LogMagnitude, StftConfig, LOG_MAG_EPS,
};

use crate::error::{Error, Result};

/// Default model-side sample rate.
pub const DEFAULT_SAMPLE_RATE: u32 = 32_000;

/// Mono signal with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioSignal {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioSignal {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Parameter("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Parameter(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }
}
