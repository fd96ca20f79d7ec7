//! Synthetic corpus generation, split manifests and framed training sets.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::{design_fir, filter_same, frame_signal, split_bands, AudioSignal, FilterKind};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::wav::{read_wav_at, write_wav_pcm16};

pub const MANIFEST_NAME: &str = "manifest.tsv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    /// 80/15/5 partition by position among `count` items.
    pub fn for_index(i: usize, count: usize) -> Split {
        let train = (count * 80).div_ceil(100);
        let val = (count * 95).div_ceil(100);
        if i < train {
            Split::Train
        } else if i < val {
            Split::Val
        } else {
            Split::Test
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// Tab-separated `split<TAB>relative path` lines.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub entries: Vec<(Split, PathBuf)>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (split, file) = line.split_once('\t').ok_or_else(|| {
                Error::Config(format!("{}:{}: expected split<TAB>path", path.display(), n + 1))
            })?;
            entries.push((split.parse()?, PathBuf::from(file)));
        }
        Ok(Self { entries })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for (split, file) in &self.entries {
            text.push_str(&format!("{split}\t{}\n", file.display()));
        }
        fs::write(path, text)?;
        Ok(())
    }

    pub fn files(&self, split: Split) -> impl Iterator<Item = &Path> {
        self.entries
            .iter()
            .filter(move |(s, _)| *s == split)
            .map(|(_, p)| p.as_path())
    }
}

/// Settings for the synthetic corpus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub sample_rate: u32,
    pub clip_samples: usize,
}

impl SynthConfig {
    /// Clips that frame into exactly `frames` frames for `model`.
    pub fn for_model(model: &ModelConfig, frames: usize) -> Self {
        let hop = model.frame_length - model.overlap;
        Self {
            sample_rate: model.sample_rate,
            clip_samples: frames.max(1) * hop + model.overlap,
        }
    }
}

fn noise(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    // sum of three uniforms: cheap, bell-shaped, unit variance
    (0..len)
        .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).sum::<f64>())
        .collect()
}

/// One synthetic clip: a few slowly modulated low-band partials, one or two
/// high-band partials, and band-limited noise in each band. Nothing is
/// placed between 7 and 8.3 kHz, where the two analysis bands overlap.
pub fn synth_clip(seed: u64, cfg: &SynthConfig) -> Result<AudioSignal> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = cfg.sample_rate as f64;
    let n = cfg.clip_samples;
    let mut x = vec![0.0; n];

    let partial = |rng: &mut ChaCha8Rng, x: &mut [f64], freq: f64, amp: f64| {
        let phase = rng.gen_range(0.0..2.0 * PI);
        let env_rate = rng.gen_range(0.3..2.0);
        let env_phase = rng.gen_range(0.0..2.0 * PI);
        let depth = rng.gen_range(0.0..0.5);
        for (i, s) in x.iter_mut().enumerate() {
            let t = i as f64 / sr;
            let env = 1.0 - depth * (0.5 + 0.5 * (2.0 * PI * env_rate * t + env_phase).sin());
            *s += amp * env * (2.0 * PI * freq * t + phase).sin();
        }
    };

    for _ in 0..rng.gen_range(2..=4) {
        let freq = (rng.gen_range(80f64.ln()..3_500f64.ln())).exp();
        let amp = rng.gen_range(0.05..0.25);
        partial(&mut rng, &mut x, freq, amp);
    }
    for _ in 0..rng.gen_range(1..=2) {
        let freq = rng.gen_range(8_800.0..(sr / 2.0 - 2_500.0).max(9_000.0));
        let amp = rng.gen_range(0.02..0.06);
        partial(&mut rng, &mut x, freq, amp);
    }

    let low = design_fir(FilterKind::Lowpass, 6_400.0, sr, 255)?;
    let high = design_fir(FilterKind::Highpass, 9_000.0, sr, 255)?;
    let low_gain = rng.gen_range(0.003..0.01);
    let high_gain = rng.gen_range(0.002..0.006);
    let low_noise = filter_same(&noise(&mut rng, n), &low);
    let high_noise = filter_same(&noise(&mut rng, n), &high);
    for ((s, a), b) in x.iter_mut().zip(&low_noise).zip(&high_noise) {
        *s += low_gain * a + high_gain * b;
    }
    AudioSignal::new(x, cfg.sample_rate)
}

/// Writes `count` clips as 16-bit WAV plus a manifest. Clip `i` uses seed
/// `seed + i`, so corpora are reproducible and prefixes agree.
pub fn write_corpus(dir: &Path, count: usize, seed: u64, cfg: &SynthConfig) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let mut manifest = Manifest::default();
    for i in 0..count {
        let name = PathBuf::from(format!("clip_{i:05}.wav"));
        let clip = synth_clip(seed.wrapping_add(i as u64), cfg)?;
        write_wav_pcm16(&dir.join(&name), &clip)?;
        manifest.entries.push((Split::for_index(i, count), name));
    }
    manifest.write(&dir.join(MANIFEST_NAME))?;
    Ok(manifest)
}

/// A frame and its two band targets, stored as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: Vec<f32>,
    pub cb: Vec<f32>,
    pub hb: Vec<f32>,
}

impl Example {
    pub fn from_frame(frame: &[f64], sample_rate: u32, cfg: &ModelConfig) -> Result<Self> {
        let x = AudioSignal::new(frame.to_vec(), sample_rate)?;
        let bands = split_bands(&x, cfg.ds_factor, &cfg.band_split)?;
        let narrow = |v: &[f64]| v.iter().map(|&s| s as f32).collect::<Vec<_>>();
        Ok(Self {
            input: narrow(frame),
            cb: narrow(bands.cb.samples()),
            hb: narrow(bands.hb.samples()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub examples: Vec<Example>,
}

impl Dataset {
    /// Frames every signal with the model's frame length and overlap.
    pub fn from_signals(signals: &[AudioSignal], cfg: &ModelConfig) -> Result<Self> {
        let mut examples = Vec::new();
        for s in signals {
            if s.sample_rate() != cfg.sample_rate {
                return Err(Error::UnsupportedAudio(format!(
                    "signal at {} Hz, model runs at {} Hz",
                    s.sample_rate(),
                    cfg.sample_rate
                )));
            }
            let frames = frame_signal(s, cfg.frame_length, cfg.overlap)?;
            for f in &frames.frames {
                examples.push(Example::from_frame(f, s.sample_rate(), cfg)?);
            }
        }
        Ok(Self { examples })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SplitDataset {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl SplitDataset {
    /// Loads every manifest entry relative to `dir`, resampling to the model
    /// rate.
    pub fn load(dir: &Path, manifest: &Manifest, cfg: &ModelConfig) -> Result<Self> {
        let load = |split| -> Result<Dataset> {
            let signals = manifest
                .files(split)
                .map(|p| read_wav_at(&dir.join(p), cfg.sample_rate))
                .collect::<Result<Vec<_>>>()?;
            Dataset::from_signals(&signals, cfg)
        };
        Ok(Self {
            train: load(Split::Train)?,
            val: load(Split::Val)?,
            test: load(Split::Test)?,
        })
    }

    pub fn get(&self, split: Split) -> &Dataset {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}
