//! Checkpoint files: run configuration plus named `f32` parameter tensors,
//! sealed with a SHA-256 digest that also identifies the model in coded
//! files.
//!
//! | field | type |
//! |---|---|
//! | magic `MBHCKPT1` | 8 bytes |
//! | config length | u32 |
//! | config (TOML) | bytes |
//! | tensor count | u32 |
//! | per tensor: name length u16, name, rows u32, cols u32, values f32 | |
//! | SHA-256 of all preceding bytes | 32 bytes |
//!
//! Integers and floats are little-endian.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::{ParamSet, Tensor};

pub const MAGIC: [u8; 8] = *b"MBHCKPT1";

pub type Hash = [u8; 32];

pub fn hex(hash: &Hash) -> String {
    hash.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub model: Model<f32>,
}

impl Checkpoint {
    pub fn new(config: RunConfig, model: Model<f32>) -> Result<Self> {
        if *model.config() != config.model {
            return Err(Error::Checkpoint("model does not match the run configuration".into()));
        }
        Ok(Self { config, model })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let text = self.config.to_toml()?;
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&len_u32(text.len())?.to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        let params = self.model.params();
        out.extend_from_slice(&len_u32(params.len())?.to_le_bytes());
        for p in params.iter() {
            let name = p.name.as_bytes();
            let name_len = u16::try_from(name.len())
                .map_err(|_| Error::Checkpoint(format!("parameter name too long: {}", p.name)))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name);
            out.extend_from_slice(&len_u32(p.value.rows())?.to_le_bytes());
            out.extend_from_slice(&len_u32(p.value.cols())?.to_le_bytes());
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    /// Parses a checkpoint and returns it with its digest.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, Hash)> {
        if bytes.len() < MAGIC.len() + 32 || bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let (body, stored) = bytes.split_at(bytes.len() - 32);
        let hash: Hash = Sha256::digest(body).into();
        if hash[..] != *stored {
            return Err(Error::Checkpoint("digest mismatch, file is corrupt".into()));
        }
        let mut r = Reader {
            bytes: body,
            pos: MAGIC.len(),
        };
        let text_len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(text_len)?)
            .map_err(|_| Error::Checkpoint("configuration is not UTF-8".into()))?;
        let config = RunConfig::from_toml(text)?;
        let count = r.u32()? as usize;
        let mut params = ParamSet::new();
        for _ in 0..count {
            let name_len = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
                .to_string();
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let n = rows
                .checked_mul(cols)
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| Error::Checkpoint(format!("tensor {name} is too large")))?;
            let values = r
                .take(n)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            params.add(name, Tensor::from_vec(rows, cols, values)?);
        }
        if r.pos != body.len() {
            return Err(Error::Checkpoint("trailing bytes after the last tensor".into()));
        }
        let model = Model::from_params(config.model.clone(), params)?;
        Ok((Self { config, model }, hash))
    }

    /// Writes the file and returns its digest.
    pub fn save(&self, path: &Path) -> Result<Hash> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, &bytes)?;
        Ok(bytes[bytes.len() - 32..].try_into().expect("32 bytes"))
    }

    pub fn load(path: &Path) -> Result<(Self, Hash)> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn hash(&self) -> Result<Hash> {
        let bytes = self.to_bytes()?;
        Ok(bytes[bytes.len() - 32..].try_into().expect("32 bytes"))
    }
}

fn len_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Checkpoint(format!("length {n} exceeds u32")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn toy() -> Checkpoint {
        let config = RunConfig {
            model: ModelConfig {
                frame_length: 256,
                overlap: 16,
                hb_layers: 1,
                cb_layers: 1,
                channels: 4,
                kernel_size: 5,
                ..ModelConfig::default()
            },
            ..RunConfig::default()
        };
        let model = Model::new(config.model.clone(), 7).unwrap();
        Checkpoint::new(config, model).unwrap()
    }

    #[test]
    fn round_trip_preserves_everything() {
        let ck = toy();
        let bytes = ck.to_bytes().unwrap();
        let (back, hash) = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.config, ck.config);
        assert_eq!(back.model.params(), ck.model.params());
        assert_eq!(hash, ck.hash().unwrap());
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn hash_tracks_weights() {
        let a = toy();
        let mut b = toy();
        b.model.params_mut().iter_mut().next().unwrap().value.data_mut()[0] += 1e-3;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
        assert_eq!(hex(&a.hash().unwrap()).len(), 64);
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = toy().to_bytes().unwrap();
        for i in [0, 10, bytes.len() / 2, bytes.len() - 1] {
            let mut bad = bytes.clone();
            bad[i] ^= 0x01;
            assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Checkpoint(_))));
        }
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 5]).is_err());
    }

    #[test]
    fn mismatched_config_is_rejected() {
        let ck = toy();
        let other = RunConfig::default();
        assert!(Checkpoint::new(other, ck.model).is_err());
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ck = toy();
        let h = ck.save(&path).unwrap();
        let (back, h2) = Checkpoint::load(&path).unwrap();
        assert_eq!(h, h2);
        assert_eq!(back.model.params(), ck.model.params());
    }
}
