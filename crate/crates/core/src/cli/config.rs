use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentationPolicy;
use crate::contrastive::{Framework, FrameworkConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::net::EncoderConfig;
use crate::probe::ProbeConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Desk,
    Reference,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

/// Every hyperparameter of a run in one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub profile: Profile,
    pub encoder: EncoderConfig,
    pub framework: FrameworkConfig,
    pub train: TrainConfig,
    pub probe: ProbeConfig,
    pub augmentation: AugmentationPolicy,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk(Framework::Simclr)
    }
}

impl RunConfig {
    /// 32 px images, compact encoder with 128 features, batch 32, 20 epochs.
    pub fn desk(framework: Framework) -> Self {
        Self {
            profile: Profile::Desk,
            encoder: EncoderConfig::compact(32, 128),
            framework: FrameworkConfig::desk(framework),
            train: TrainConfig::desk(),
            probe: ProbeConfig::default(),
            augmentation: AugmentationPolicy::standard(32),
            paths: Paths::default(),
        }
    }

    /// 224 px images, bottleneck encoder, batch 192, 50 epochs.
    pub fn reference(framework: Framework) -> Self {
        Self {
            profile: Profile::Reference,
            encoder: EncoderConfig::reference(224),
            framework: FrameworkConfig::reference(framework),
            train: TrainConfig::reference(),
            probe: ProbeConfig::default(),
            augmentation: AugmentationPolicy::standard(224),
            paths: Paths::default(),
        }
    }

    pub fn for_profile(profile: Profile, framework: Framework) -> Self {
        match profile {
            Profile::Desk => Self::desk(framework),
            Profile::Reference => Self::reference(framework),
        }
    }

    /// Parse a config file, returning the parsed value and its exact text.
    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        Ok((cfg, text))
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.augmentation.validate()?;
        self.train.validate(self.framework.framework)?;
        self.probe.validate()?;
        if self.augmentation.output_size != self.encoder.input_size {
            return Err(Error::Config(format!(
                "augmentation output size {} differs from encoder input size {}",
                self.augmentation.output_size, self.encoder.input_size
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_documents_fill_from_desk_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"train": {"epochs": 3}}"#).unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.batch_size, 32);
        assert_eq!(cfg.encoder, EncoderConfig::compact(32, 128));
        cfg.validate().unwrap();
    }

    #[test]
    fn round_trip_and_profiles() {
        for p in [Profile::Desk, Profile::Reference] {
            let cfg = RunConfig::for_profile(p, Framework::Moco);
            cfg.validate().unwrap();
            let back: RunConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
            assert_eq!(back, cfg);
        }
        assert_eq!(RunConfig::reference(Framework::Simclr).train.batch_size, 192);
    }
}
