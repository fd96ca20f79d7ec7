//! Run configuration file: a `[model]` and a `[training]` table.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub training: TrainConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.training.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::Variant;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = RunConfig::from_toml(
            "[model]\nchannels = 16\n\n[training]\nvariant = \"bl2\"\ntarget_total = 48000.0\n",
        )
        .unwrap();
        assert_eq!(cfg.model.channels, 16);
        assert_eq!(cfg.model.frame_length, 16_384);
        assert_eq!(cfg.training.variant, Variant::Bl2);
        assert_eq!(cfg.training.loss().unwrap().targets.total, Some(48_000.0));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(matches!(RunConfig::from_toml("[model]\nchanels = 3\n"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("[model]\nkernel_size = 4\n"), Err(Error::Config(_))));
        assert!(matches!(
            RunConfig::from_toml("[training]\nvariant = \"q\"\n"),
            Err(Error::Config(_))
        ));
    }
}
