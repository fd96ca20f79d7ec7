use std::f64::consts::PI;

use num_traits::Float;
use rustfft::{num_complex::Complex, FftNum, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Offset inside the log so silent bins stay finite.
pub const LOG_MAG_EPS: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StftConfig {
    pub win: usize,
    pub hop: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            win: 1024,
            hop: 256,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.win.is_power_of_two() || self.win < 2 {
            return Err(Error::Parameter(format!(
                "STFT window {} is not a power of two",
                self.win
            )));
        }
        if self.hop == 0 || self.hop > self.win {
            return Err(Error::Parameter(format!(
                "STFT hop {} must be in 1..={}",
                self.hop, self.win
            )));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.win / 2 + 1
    }
}

/// Periodic Hann window of length `win`.
pub fn hann_periodic<T: Float>(win: usize) -> Vec<T> {
    (0..win)
        .map(|n| T::from(0.5 - 0.5 * (2.0 * PI * n as f64 / win as f64).cos()).unwrap())
        .collect()
}

/// Frames start at multiples of `hop`; the tail is zero padded. Signals no
/// longer than one window give a single frame.
pub fn stft_frame_count(len: usize, win: usize, hop: usize) -> usize {
    if len <= win {
        1
    } else {
        1 + (len - win).div_ceil(hop)
    }
}

/// Row-major (frames x bins) log-magnitude spectrogram.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMagnitude<T> {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<T>,
}

impl<T: Copy> LogMagnitude<T> {
    pub fn row(&self, frame: usize) -> &[T] {
        &self.data[frame * self.bins..(frame + 1) * self.bins]
    }
}

/// Hann-windowed STFT magnitudes mapped through `ln(|X| + eps)`.
pub fn log_mag_stft<T: Float + FftNum>(x: &[T], cfg: &StftConfig) -> Result<LogMagnitude<T>> {
    cfg.validate()?;
    let spec = stft(x, cfg);
    let eps = T::from(LOG_MAG_EPS).unwrap();
    let bins = cfg.bins();
    let frames = spec.len() / bins;
    let data = spec.iter().map(|c| (c.norm() + eps).ln()).collect();
    Ok(LogMagnitude { frames, bins, data })
}

/// One-sided complex spectrum, row-major (frames x bins).
pub(crate) fn stft<T: Float + FftNum>(x: &[T], cfg: &StftConfig) -> Vec<Complex<T>> {
    let win = cfg.win;
    let bins = cfg.bins();
    let frames = stft_frame_count(x.len(), win, cfg.hop);
    let window = hann_periodic::<T>(win);
    let fft = FftPlanner::<T>::new().plan_fft_forward(win);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); win];
    let mut out = Vec::with_capacity(frames * bins);
    for f in 0..frames {
        let start = f * cfg.hop;
        for (n, b) in buf.iter_mut().enumerate() {
            let v = x.get(start + n).copied().unwrap_or_else(T::zero);
            *b = Complex::new(v * window[n], T::zero());
        }
        fft.process(&mut buf);
        out.extend_from_slice(&buf[..bins]);
    }
    out
}

/// Adjoint of [`stft`] for a real input: maps per-bin gradients
/// `dL/dRe + i dL/dIm` back to `dL/dx`, accumulating into `grad_x`.
pub(crate) fn stft_adjoint<T: Float + FftNum>(
    grad_spec: &[Complex<T>],
    cfg: &StftConfig,
    grad_x: &mut [T],
) {
    let win = cfg.win;
    let bins = cfg.bins();
    let frames = grad_spec.len() / bins;
    let window = hann_periodic::<T>(win);
    let ifft = FftPlanner::<T>::new().plan_fft_inverse(win);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); win];
    for f in 0..frames {
        buf.iter_mut()
            .for_each(|b| *b = Complex::new(T::zero(), T::zero()));
        buf[..bins].copy_from_slice(&grad_spec[f * bins..(f + 1) * bins]);
        // Unnormalized inverse: sum_k G_k e^{+i 2 pi k n / N}.
        ifft.process(&mut buf);
        let start = f * cfg.hop;
        for (n, b) in buf.iter().enumerate() {
            if let Some(g) = grad_x.get_mut(start + n) {
                *g = *g + b.re * window[n];
            }
        }
    }
}
