//! Mono WAV input and output.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::dsp::{resample, AudioSignal};
use crate::error::{Error, Result};

/// Reads a mono PCM (16/24/32-bit) or float-32 file, scaled to [-1, 1).
pub fn read_wav(path: &Path) -> Result<AudioSignal> {
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedAudio(format!(
            "{}: {} channels, only mono is supported",
            path.display(),
            spec.channels
        )));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        (SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = (1u64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()?
        }
        (format, bits) => {
            return Err(Error::UnsupportedAudio(format!(
                "{}: {bits}-bit {format:?} samples",
                path.display()
            )))
        }
    };
    AudioSignal::new(samples, spec.sample_rate)
}

/// Reads a file and resamples it to `rate` if needed.
pub fn read_wav_at(path: &Path, rate: u32) -> Result<AudioSignal> {
    let x = read_wav(path)?;
    if x.sample_rate() == rate {
        Ok(x)
    } else {
        resample(&x, rate)
    }
}

/// Writes IEEE float-32 samples.
pub fn write_wav_f32(path: &Path, x: &AudioSignal) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: x.sample_rate(),
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut w = WavWriter::create(path, spec)?;
    for &s in x.samples() {
        w.write_sample(s as f32)?;
    }
    w.finalize()?;
    Ok(())
}

/// Writes 16-bit PCM with rounding and clipping.
pub fn write_wav_pcm16(path: &Path, x: &AudioSignal) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: x.sample_rate(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut w = WavWriter::create(path, spec)?;
    for &s in x.samples() {
        w.write_sample((s * 32_768.0).round().clamp(-32_768.0, 32_767.0) as i16)?;
    }
    w.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_round_trip_is_exact_for_f32_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let x = AudioSignal::new(vec![0.25, -0.5, 0.125, 0.75], 32_000).unwrap();
        write_wav_f32(&path, &x).unwrap();
        assert_eq!(read_wav(&path).unwrap(), x);
    }

    #[test]
    fn pcm16_round_trip_within_one_step() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.wav");
        let x = AudioSignal::new(vec![0.3, -0.7, 0.0, 1.5], 16_000).unwrap();
        write_wav_pcm16(&path, &x).unwrap();
        let y = read_wav(&path).unwrap();
        assert_eq!(y.sample_rate(), 16_000);
        for (a, b) in x.samples().iter().zip(y.samples()) {
            assert!((a.min(32_767.0 / 32_768.0) - b).abs() <= 1.0 / 32_768.0);
        }
    }

    #[test]
    fn stereo_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: 32_000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&path, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        assert!(matches!(read_wav(&path), Err(Error::UnsupportedAudio(_))));
    }

    #[test]
    fn other_rates_are_resampled() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.wav");
        write_wav_f32(&path, &AudioSignal::zeros(4410, 44_100)).unwrap();
        let y = read_wav_at(&path, 32_000).unwrap();
        assert_eq!(y.sample_rate(), 32_000);
        assert!((y.len() as i64 - 3200).abs() <= 1);
    }
}
