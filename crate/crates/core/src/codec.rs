//! WAV-to-bitstream encoding and decoding with a trained model.
//!
//! Both directions run the same per-frame hard-quantized path as
//! [`crate::training::evaluate`]. Decoded core-band frames are overlap-added
//! at the decimated rate and high-band frames at full rate; the two are then
//! merged as `hb + U(cb)` and trimmed to the source length.

use crate::bitstream::{CodedFile, StreamHeader};
use crate::checkpoint::{hex, Hash};
use crate::dsp::{frame_signal, overlap_add, AudioSignal, FrameSet};
use crate::error::{Error, Result};
use crate::model::{reconstruct_full, Ablation, DecodedPair, FrameCodes, Model, ModelConfig};
use crate::quantizer::Band;
use crate::training::hard_pass;

fn frames_of(model: &Model<f32>, x: &AudioSignal) -> Result<FrameSet> {
    let cfg = model.config();
    if x.sample_rate() != cfg.sample_rate {
        return Err(Error::UnsupportedAudio(format!(
            "signal at {} Hz, model runs at {} Hz",
            x.sample_rate(),
            cfg.sample_rate
        )));
    }
    if x.is_empty() {
        return Err(Error::UnsupportedAudio("empty signal".into()));
    }
    frame_signal(x, cfg.frame_length, cfg.overlap)
}

fn narrow(frame: &[f64]) -> Vec<f32> {
    frame.iter().map(|&s| s as f32).collect()
}

/// Overlap-adds decoded frames per band: the core band at the decimated
/// rate and the high band at full rate, both untrimmed.
pub fn assemble_bands(cfg: &ModelConfig, decoded: &[DecodedPair<f32>]) -> (Vec<f64>, Vec<f64>) {
    let widen = |v: &[f32]| v.iter().map(|&s| s as f64).collect::<Vec<_>>();
    let ds = cfg.ds_factor;
    let cb = overlap_add(&FrameSet {
        frames: decoded.iter().map(|d| widen(&d.x_cb)).collect(),
        frame_length: cfg.frame_length / ds,
        overlap: cfg.overlap / ds,
        sample_rate: cfg.sample_rate / ds as u32,
    });
    let hb = overlap_add(&FrameSet {
        frames: decoded.iter().map(|d| widen(&d.x_hb)).collect(),
        frame_length: cfg.frame_length,
        overlap: cfg.overlap,
        sample_rate: cfg.sample_rate,
    });
    (cb.into_samples(), hb.into_samples())
}

/// Merges decoded band frames into `len` full-rate samples.
pub fn assemble(cfg: &ModelConfig, len: usize, decoded: &[DecodedPair<f32>]) -> Result<Vec<f32>> {
    let (cb, hb) = assemble_bands(cfg, decoded);
    let mut full = reconstruct_full(cfg, &cb, &hb)?;
    if full.len() < len {
        return Err(Error::Shape(format!("{} decoded samples for {len} requested", full.len())));
    }
    full.truncate(len);
    Ok(narrow(&full))
}

fn decode_frames(model: &Model<f32>, x: &AudioSignal, ablation: Ablation) -> Result<Vec<DecodedPair<f32>>> {
    frames_of(model, x)?
        .frames
        .iter()
        .map(|f| hard_pass(model, &narrow(f), ablation).map(|(_, d)| d))
        .collect()
}

/// High-band reconstruction of a whole signal, trimmed to its length.
pub fn reconstruct_hb(model: &Model<f32>, x: &AudioSignal, ablation: Ablation) -> Result<Vec<f64>> {
    let (_, mut hb) = assemble_bands(model.config(), &decode_frames(model, x, ablation)?);
    hb.truncate(x.len());
    Ok(hb)
}

/// In-memory hard-quantized reconstruction of a whole signal.
pub fn reconstruct(model: &Model<f32>, x: &AudioSignal, ablation: Ablation) -> Result<Vec<f32>> {
    assemble(model.config(), x.len(), &decode_frames(model, x, ablation)?)
}

pub fn encode(model: &Model<f32>, hash: &Hash, x: &AudioSignal) -> Result<CodedFile> {
    let frames = frames_of(model, x)?;
    let codes = frames
        .frames
        .iter()
        .map(|f| model.encode_indices(&narrow(f)))
        .collect::<Result<Vec<FrameCodes>>>()?;
    let cfg = model.config();
    let header = StreamHeader {
        sample_rate: cfg.sample_rate,
        original_length: x.len() as u64,
        frame_length: cfg.frame_length as u32,
        overlap: cfg.overlap as u32,
        ds_factor: cfg.ds_factor as u32,
        checkpoint_hash: *hash,
    };
    CodedFile::from_codes(
        header,
        model.centroids(Band::Cb).to_vec(),
        model.centroids(Band::Hb).to_vec(),
        &codes,
    )
}

/// Refuses files produced with a different checkpoint.
pub fn check_pairing(model: &Model<f32>, hash: &Hash, file: &CodedFile) -> Result<()> {
    let h = &file.header;
    if h.checkpoint_hash != *hash {
        return Err(Error::CheckpointMismatch {
            expected: hex(&h.checkpoint_hash),
            actual: hex(hash),
        });
    }
    let cfg = model.config();
    let framing = (h.sample_rate, h.frame_length as usize, h.overlap as usize, h.ds_factor as usize);
    if framing != (cfg.sample_rate, cfg.frame_length, cfg.overlap, cfg.ds_factor) {
        return Err(Error::Bitstream(format!(
            "stream framing {framing:?} differs from the checkpoint's"
        )));
    }
    if file.cb.centroids != model.centroids(Band::Cb) || file.hb.centroids != model.centroids(Band::Hb) {
        return Err(Error::Bitstream("centroid tables differ from the checkpoint's".into()));
    }
    Ok(())
}

pub fn decode(model: &Model<f32>, hash: &Hash, file: &CodedFile) -> Result<AudioSignal> {
    check_pairing(model, hash, file)?;
    let len = usize::try_from(file.header.original_length)
        .map_err(|_| Error::Bitstream("original length overflows".into()))?;
    let expected = crate::dsp::frame_count(len, model.config().frame_length, model.config().overlap);
    if file.frames.len() != expected {
        return Err(Error::Bitstream(format!(
            "{} frames for {len} samples, expected {expected}",
            file.frames.len()
        )));
    }
    let decoded = file
        .decode_codes()?
        .iter()
        .map(|c| model.decode_indices(c))
        .collect::<Result<Vec<_>>>()?;
    let out = assemble(model.config(), len, &decoded)?;
    AudioSignal::new(out.into_iter().map(f64::from).collect(), model.config().sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_clip, SynthConfig};

    fn toy() -> (Model<f32>, Hash) {
        let cfg = ModelConfig {
            frame_length: 256,
            overlap: 16,
            hb_layers: 1,
            cb_layers: 1,
            channels: 4,
            kernel_size: 5,
            ..ModelConfig::default()
        };
        (Model::new(cfg, 3).unwrap(), [7; 32])
    }

    fn clip(len: usize) -> AudioSignal {
        synth_clip(5, &SynthConfig { sample_rate: 32_000, clip_samples: len }).unwrap()
    }

    #[test]
    fn decode_matches_in_memory_reconstruction_bit_exactly() {
        let (model, hash) = toy();
        for len in [1000, 240, 100, 257] {
            let x = clip(len);
            let file = encode(&model, &hash, &x).unwrap();
            let bytes = file.serialize();
            let y = decode(&model, &hash, &CodedFile::parse(&bytes).unwrap()).unwrap();
            let direct = reconstruct(&model, &x, Ablation::NONE).unwrap();
            assert_eq!(y.len(), len);
            let y32: Vec<f32> = y.samples().iter().map(|&v| v as f32).collect();
            assert_eq!(y32, direct);
        }
    }

    #[test]
    fn transcoding_codes_is_a_fixed_point() {
        let (model, hash) = toy();
        let file = encode(&model, &hash, &clip(900)).unwrap();
        let bytes = file.serialize();
        let parsed = CodedFile::parse(&bytes).unwrap();
        let again = CodedFile::from_codes(
            parsed.header.clone(),
            parsed.cb.centroids.clone(),
            parsed.hb.centroids.clone(),
            &parsed.decode_codes().unwrap(),
        )
        .unwrap();
        assert_eq!(again.serialize(), bytes);
    }

    #[test]
    fn wrong_checkpoint_is_refused() {
        let (model, hash) = toy();
        let file = encode(&model, &hash, &clip(500)).unwrap();
        assert!(matches!(decode(&model, &[0; 32], &file), Err(Error::CheckpointMismatch { .. })));
        let mut other = model.clone();
        let shifted: Vec<f64> = model.centroids(Band::Hb).iter().map(|&c| c as f64 + 0.01).collect();
        other
            .set_codebook(&crate::quantizer::Codebook::new(Band::Hb, shifted).unwrap())
            .unwrap();
        assert!(matches!(decode(&other, &hash, &file), Err(Error::Bitstream(_))));
    }

    #[test]
    fn wrong_rate_and_empty_input_are_rejected() {
        let (model, hash) = toy();
        let x = AudioSignal::new(vec![0.1; 300], 16_000).unwrap();
        assert!(matches!(encode(&model, &hash, &x), Err(Error::UnsupportedAudio(_))));
        let e = AudioSignal::zeros(0, 32_000);
        assert!(matches!(encode(&model, &hash, &e), Err(Error::UnsupportedAudio(_))));
    }
}
