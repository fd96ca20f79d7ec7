use std::f64::consts::PI;

use super::AudioSignal;
use crate::error::{Error, Result};

/// Fixed-length frames cut from a signal with `overlap` shared samples
/// between neighbours.
///
/// Interior frame edges carry a half-Hann fade so that adjacent fades sum
/// to one; the outer edges of the first and last frame are left unfaded,
/// so plain summation in [`overlap_add`] restores the source.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSet {
    pub frames: Vec<Vec<f64>>,
    pub frame_length: usize,
    pub overlap: usize,
    pub sample_rate: u32,
}

impl FrameSet {
    pub fn hop(&self) -> usize {
        self.frame_length - self.overlap
    }

    /// Fade-in gains over the overlap region; the fade-out is the mirror.
    pub fn fade_in(&self) -> Vec<f64> {
        fade_in(self.overlap)
    }
}

pub(crate) fn fade_in(overlap: usize) -> Vec<f64> {
    (0..overlap)
        .map(|n| {
            let s = (PI * (n as f64 + 0.5) / (2.0 * overlap as f64)).sin();
            s * s
        })
        .collect()
}

/// Number of frames needed to cover `len` samples.
pub fn frame_count(len: usize, frame_length: usize, overlap: usize) -> usize {
    if len == 0 {
        return 0;
    }
    let hop = frame_length - overlap;
    if len <= frame_length {
        1
    } else {
        (len - overlap).div_ceil(hop)
    }
}

pub fn frame_signal(x: &AudioSignal, frame_length: usize, overlap: usize) -> Result<FrameSet> {
    if frame_length <= overlap {
        return Err(Error::InvalidFraming {
            frame_length,
            overlap,
        });
    }
    let hop = frame_length - overlap;
    let count = frame_count(x.len(), frame_length, overlap);
    let fade = fade_in(overlap);
    let src = x.samples();

    let mut frames = Vec::with_capacity(count);
    for i in 0..count {
        let start = i * hop;
        let mut frame = vec![0.0; frame_length];
        let end = (start + frame_length).min(src.len());
        frame[..end - start].copy_from_slice(&src[start..end]);
        if i > 0 {
            for (s, g) in frame.iter_mut().zip(&fade) {
                *s *= g;
            }
        }
        if i + 1 < count {
            let tail = frame_length - overlap;
            for (s, g) in frame[tail..].iter_mut().zip(fade.iter().rev()) {
                *s *= g;
            }
        }
        frames.push(frame);
    }

    Ok(FrameSet {
        frames,
        frame_length,
        overlap,
        sample_rate: x.sample_rate(),
    })
}

/// Sums frames at hop spacing. The result spans `(n - 1) * hop + frame_length`
/// samples; callers trim to the original length.
pub fn overlap_add(f: &FrameSet) -> AudioSignal {
    if f.frames.is_empty() {
        return AudioSignal::zeros(0, f.sample_rate);
    }
    let hop = f.hop();
    let len = (f.frames.len() - 1) * hop + f.frame_length;
    let mut out = vec![0.0; len];
    for (i, frame) in f.frames.iter().enumerate() {
        let start = i * hop;
        for (o, s) in out[start..start + frame.len()].iter_mut().zip(frame) {
            *o += s;
        }
    }
    AudioSignal::zeros(0, f.sample_rate).with_samples(out)
}

impl AudioSignal {
    pub(crate) fn with_samples(mut self, samples: Vec<f64>) -> Self {
        self.samples = samples;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64) -> AudioSignal {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AudioSignal::new((0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(), 32_000).unwrap()
    }

    #[test]
    fn frame_count_matches_ceiling_arithmetic() {
        let x = AudioSignal::new(vec![1.0; 32_800], 32_000).unwrap();
        let f = frame_signal(&x, 16_384, 32).unwrap();
        assert_eq!(f.frames.len(), 3);
        assert!(f.frames.iter().all(|fr| fr.len() == 16_384));
    }

    #[test]
    fn degenerate_hop_is_rejected() {
        let x = AudioSignal::new(vec![1.0; 16], 32_000).unwrap();
        assert!(matches!(
            frame_signal(&x, 4, 4),
            Err(Error::InvalidFraming { .. })
        ));
    }

    #[test]
    fn zero_overlap_round_trip_is_exact() {
        let x = noise(1000, 1);
        let f = frame_signal(&x, 128, 0).unwrap();
        let y = overlap_add(&f);
        assert_eq!(&y.samples()[..x.len()], x.samples());
        assert!(y.samples()[x.len()..].iter().all(|&s| s == 0.0));
    }

    #[test]
    fn overlapped_round_trip_recovers_interior() {
        let x = noise(70_000, 2);
        let f = frame_signal(&x, 16_384, 32).unwrap();
        let y = overlap_add(&f);
        let range = 32..x.len() - 32;
        let err: f64 = range
            .clone()
            .map(|i| (x.samples()[i] - y.samples()[i]).powi(2))
            .sum();
        let sig: f64 = range.map(|i| x.samples()[i].powi(2)).sum();
        assert!((err / sig).sqrt() < 1e-6);
    }

    #[test]
    fn single_frame_is_verbatim() {
        let frame: Vec<f64> = (0..64).map(|i| i as f64).collect();
        let fs = FrameSet {
            frames: vec![frame.clone()],
            frame_length: 64,
            overlap: 8,
            sample_rate: 32_000,
        };
        assert_eq!(overlap_add(&fs).samples(), &frame[..]);
    }

    #[test]
    fn faded_ones_sum_to_one() {
        let x = AudioSignal::new(vec![1.0; 200], 32_000).unwrap();
        let f = frame_signal(&x, 116, 32).unwrap();
        assert_eq!(f.frames.len(), 2);
        let y = overlap_add(&f);
        for s in &y.samples()[..200] {
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fades_partition_unity() {
        let fade = fade_in(32);
        for n in 0..32 {
            assert!((fade[n] + fade[31 - n] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_frameset_gives_empty_signal() {
        let x = AudioSignal::zeros(0, 32_000);
        let f = frame_signal(&x, 64, 8).unwrap();
        assert!(f.frames.is_empty());
        assert!(overlap_add(&f).is_empty());
    }
}
