use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::AudioSignal;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterKind {
    Lowpass,
    Highpass,
}

/// Linear-phase FIR filter with an odd tap count.
#[derive(Debug, Clone, PartialEq)]
pub struct FirFilter {
    pub taps: Vec<f64>,
    pub kind: FilterKind,
    pub cutoff_hz: f64,
}

impl FirFilter {
    pub fn group_delay(&self) -> usize {
        (self.taps.len() - 1) / 2
    }

    /// Magnitude of the frequency response at `freq_hz`.
    pub fn magnitude_at(&self, freq_hz: f64, sample_rate: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / sample_rate;
        let (re, im) = self
            .taps
            .iter()
            .enumerate()
            .fold((0.0, 0.0), |(re, im), (n, h)| {
                let a = w * n as f64;
                (re + h * a.cos(), im - h * a.sin())
            });
        re.hypot(im)
    }
}

/// Hann window without zero end points, so every tap contributes.
fn hann_taps(taps: usize) -> impl Iterator<Item = f64> {
    (0..taps).map(move |n| 0.5 - 0.5 * (2.0 * PI * (n as f64 + 1.0) / (taps as f64 + 1.0)).cos())
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Hann-windowed sinc design. The highpass is the spectral inversion of the
/// lowpass with the same cutoff.
pub fn design_fir(
    kind: FilterKind,
    cutoff_hz: f64,
    sample_rate: f64,
    taps: usize,
) -> Result<FirFilter> {
    if !(cutoff_hz > 0.0 && cutoff_hz < sample_rate / 2.0) {
        return Err(Error::Parameter(format!(
            "cutoff {cutoff_hz} Hz outside (0, {}) Hz",
            sample_rate / 2.0
        )));
    }
    if taps % 2 == 0 {
        return Err(Error::Parameter(format!("tap count {taps} must be odd")));
    }
    let fc = cutoff_hz / sample_rate;
    let center = (taps / 2) as f64;
    let mut h: Vec<f64> = hann_taps(taps)
        .enumerate()
        .map(|(n, w)| 2.0 * fc * sinc(2.0 * fc * (n as f64 - center)) * w)
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= sum);
    if kind == FilterKind::Highpass {
        h.iter_mut().for_each(|v| *v = -*v);
        h[taps / 2] += 1.0;
    }
    Ok(FirFilter {
        taps: h,
        kind,
        cutoff_hz,
    })
}

/// Zero-phase application: output sample `n` is aligned with input sample
/// `n` (group delay removed), zeros assumed outside the signal.
pub fn filter_same(x: &[f64], filter: &FirFilter) -> Vec<f64> {
    filter_strided(x, filter, 1)
}

/// Computes every `step`-th output of [`filter_same`].
fn filter_strided(x: &[f64], filter: &FirFilter, step: usize) -> Vec<f64> {
    let h = &filter.taps;
    let delay = filter.group_delay() as isize;
    let len = x.len() as isize;
    (0..x.len())
        .step_by(step)
        .map(|n| {
            // y[n] = sum_k h[k] x[n + delay - k]
            let n = n as isize;
            let k_lo = (n + delay - (len - 1)).max(0) as usize;
            let k_hi = ((n + delay).min(h.len() as isize - 1)) as usize;
            if k_lo > k_hi {
                return 0.0;
            }
            let x_hi = (n + delay - k_lo as isize) as usize;
            let x_lo = x_hi + k_lo - k_hi;
            h[k_lo..=k_hi]
                .iter()
                .zip(x[x_lo..=x_hi].iter().rev())
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect()
}

/// Band-split filter settings. Defaults follow the 8 kHz core-band and
/// 7.3 kHz high-band cutoffs at 32 kHz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BandSplitConfig {
    pub cb_cutoff_hz: f64,
    pub hb_cutoff_hz: f64,
    pub taps: usize,
}

impl Default for BandSplitConfig {
    fn default() -> Self {
        Self {
            cb_cutoff_hz: 8_000.0,
            hb_cutoff_hz: 7_300.0,
            taps: 255,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandPair {
    /// Lowpassed and decimated core band.
    pub cb: AudioSignal,
    /// Highpassed full-rate high band.
    pub hb: AudioSignal,
}

/// Splits `x` into a decimated core band and a full-rate high band. The
/// input is zero-padded to a multiple of `ds_factor`.
pub fn split_bands(x: &AudioSignal, ds_factor: usize, cfg: &BandSplitConfig) -> Result<BandPair> {
    if ds_factor == 0 {
        return Err(Error::Parameter("decimation factor must be >= 1".into()));
    }
    let sr = x.sample_rate() as f64;
    let lp = design_fir(FilterKind::Lowpass, cfg.cb_cutoff_hz, sr, cfg.taps)?;
    let hp = design_fir(FilterKind::Highpass, cfg.hb_cutoff_hz, sr, cfg.taps)?;

    let mut padded = x.samples().to_vec();
    padded.resize(x.len().div_ceil(ds_factor) * ds_factor, 0.0);

    let cb = filter_strided(&padded, &lp, ds_factor);
    let hb = filter_same(&padded, &hp);
    Ok(BandPair {
        cb: AudioSignal::new(cb, x.sample_rate() / ds_factor as u32)?,
        hb: AudioSignal::new(hb, x.sample_rate())?,
    })
}

/// Interpolating upsampler: zero-stuff by `us_factor`, lowpass at the input
/// Nyquist frequency, and restore gain.
pub fn upsample_interp(cb: &AudioSignal, us_factor: usize, taps: usize) -> Result<AudioSignal> {
    if us_factor == 0 {
        return Err(Error::Parameter("upsampling factor must be >= 1".into()));
    }
    if us_factor == 1 {
        return Ok(cb.clone());
    }
    let out_rate = cb.sample_rate() * us_factor as u32;
    let lp = design_fir(
        FilterKind::Lowpass,
        cb.sample_rate() as f64 / 2.0,
        out_rate as f64,
        taps,
    )?;
    let mut stuffed = vec![0.0; cb.len() * us_factor];
    for (i, s) in cb.samples().iter().enumerate() {
        stuffed[i * us_factor] = s * us_factor as f64;
    }
    AudioSignal::new(filter_same(&stuffed, &lp), out_rate)
}

/// Arbitrary-ratio windowed-sinc resampler used to bring input audio to the
/// model rate.
pub fn resample(x: &AudioSignal, target_rate: u32) -> Result<AudioSignal> {
    if target_rate == 0 {
        return Err(Error::Parameter("target rate must be positive".into()));
    }
    let src_rate = x.sample_rate();
    if src_rate == target_rate {
        return Ok(x.clone());
    }
    let ratio = target_rate as f64 / src_rate as f64;
    // Kernel bandwidth relative to the input rate, with a small guard band.
    let band = ratio.min(1.0) * 0.95;
    let half_width = (16.0 / band).ceil() as isize;
    let out_len = (x.len() as f64 * ratio).round() as usize;
    let src = x.samples();
    let step = src_rate as f64 / target_rate as f64;

    let out = (0..out_len)
        .map(|n| {
            let t = n as f64 * step;
            let center = t.floor() as isize;
            let lo = (center - half_width + 1).max(0);
            let hi = (center + half_width).min(src.len() as isize - 1);
            (lo..=hi)
                .map(|k| {
                    let d = t - k as f64;
                    let w = 0.5 + 0.5 * (PI * d / half_width as f64).cos();
                    src[k as usize] * band * sinc(band * d) * w
                })
                .sum()
        })
        .collect();
    AudioSignal::new(out, target_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, amp: f64, len: usize, rate: u32) -> AudioSignal {
        let s = (0..len)
            .map(|n| amp * (2.0 * PI * freq * n as f64 / rate as f64).sin())
            .collect();
        AudioSignal::new(s, rate).unwrap()
    }

    fn interior_energy(x: &[f64], margin: usize) -> f64 {
        x[margin..x.len() - margin].iter().map(|s| s * s).sum()
    }

    #[test]
    fn lowpass_passband_is_flat() {
        let lp = design_fir(FilterKind::Lowpass, 8_000.0, 32_000.0, 255).unwrap();
        let g = lp.magnitude_at(1_000.0, 32_000.0);
        assert!((0.99..=1.01).contains(&g), "gain {g}");
        assert!((lp.taps.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn lowpass_stopband_one_khz_past_cutoff() {
        let lp = design_fir(FilterKind::Lowpass, 8_000.0, 32_000.0, 255).unwrap();
        let g = lp.magnitude_at(9_000.0, 32_000.0);
        assert!(20.0 * g.log10() <= -44.0, "attenuation {} dB", 20.0 * g.log10());
    }

    #[test]
    fn highpass_has_dc_null() {
        let hp = design_fir(FilterKind::Highpass, 7_300.0, 32_000.0, 255).unwrap();
        assert!(hp.taps.iter().sum::<f64>().abs() < 1e-6);
        assert_eq!(hp.taps.len() % 2, 1);
    }

    #[test]
    fn cutoff_above_nyquist_is_rejected() {
        assert!(design_fir(FilterKind::Lowpass, 20_000.0, 32_000.0, 255).is_err());
        assert!(design_fir(FilterKind::Lowpass, 8_000.0, 32_000.0, 254).is_err());
    }

    #[test]
    fn low_sine_stays_out_of_high_band() {
        let x = sine(1_000.0, 1.0, 8_192, 32_000);
        let bands = split_bands(&x, 2, &BandSplitConfig::default()).unwrap();
        let ratio = interior_energy(bands.hb.samples(), 256) / interior_energy(x.samples(), 256);
        assert!(10.0 * ratio.log10() <= -40.0);
    }

    #[test]
    fn high_sine_stays_out_of_core_band() {
        let x = sine(12_000.0, 1.0, 8_192, 32_000);
        let bands = split_bands(&x, 2, &BandSplitConfig::default()).unwrap();
        // cb runs at half rate, so compare per-sample power.
        let cb_power = interior_energy(bands.cb.samples(), 128) / (bands.cb.len() - 256) as f64;
        let x_power = interior_energy(x.samples(), 256) / (x.len() - 512) as f64;
        assert!(10.0 * (cb_power / x_power).log10() <= -40.0);
    }

    #[test]
    fn zero_signal_splits_to_zero() {
        let x = AudioSignal::zeros(1000, 32_000);
        let bands = split_bands(&x, 2, &BandSplitConfig::default()).unwrap();
        assert_eq!(bands.cb.len(), 500);
        assert_eq!(bands.hb.len(), 1000);
        assert!(bands.cb.samples().iter().all(|&s| s == 0.0));
        assert!(bands.hb.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn odd_length_is_padded_to_factor() {
        let x = sine(500.0, 0.5, 1001, 32_000);
        let bands = split_bands(&x, 2, &BandSplitConfig::default()).unwrap();
        assert_eq!(bands.hb.len(), 2 * bands.cb.len());
    }

    #[test]
    fn unit_upsampling_is_identity() {
        let x = sine(500.0, 0.5, 300, 16_000);
        assert_eq!(upsample_interp(&x, 1, 255).unwrap(), x);
    }

    #[test]
    fn upsampled_sine_keeps_amplitude() {
        let x = sine(1_000.0, 1.0, 4_096, 16_000);
        let y = upsample_interp(&x, 2, 255).unwrap();
        assert_eq!(y.sample_rate(), 32_000);
        assert_eq!(y.len(), 8_192);
        let dense = sine(1_000.0, 1.0, 8_192, 32_000);
        for n in 512..8_192 - 512 {
            assert!((y.samples()[n] - dense.samples()[n]).abs() <= 0.02);
        }
    }

    #[test]
    fn resample_44k1_sine() {
        let x = sine(1_000.0, 0.5, 44_100, 44_100);
        let y = resample(&x, 32_000).unwrap();
        assert_eq!(y.len(), 32_000);
        let dense = sine(1_000.0, 0.5, 32_000, 32_000);
        for n in 200..31_800 {
            assert!((y.samples()[n] - dense.samples()[n]).abs() < 5e-3);
        }
    }
}
