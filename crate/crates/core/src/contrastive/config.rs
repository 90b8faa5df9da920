use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{HeadKind, HeadSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Framework {
    Simclr,
    Moco,
    Byol,
}

impl Framework {
    pub const ALL: [Framework; 3] = [Framework::Simclr, Framework::Moco, Framework::Byol];

    pub fn as_str(self) -> &'static str {
        match self {
            Framework::Simclr => "simclr",
            Framework::Moco => "moco",
            Framework::Byol => "byol",
        }
    }
}

impl fmt::Display for Framework {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Framework {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Framework::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown framework `{s}` (expected simclr, moco, or byol)")))
    }
}

/// How BYOL's target network starts out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TargetInit {
    /// Copy of the online network.
    #[default]
    CopyOfOnline,
    /// Independent random draw.
    Independent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrameworkConfig {
    pub framework: Framework,
    pub temperature: f64,
    pub momentum: f64,
    pub queue_capacity: usize,
    pub ema_decay: f64,
    pub symmetrize_byol: bool,
    pub byol_target_init: TargetInit,
    pub projection_hidden: usize,
    pub latent_dim: usize,
    pub predictor_hidden: usize,
    /// Batch-standardize hidden units of the projection and predictor heads.
    pub head_batch_norm: bool,
}

impl Default for FrameworkConfig {
    fn default() -> Self {
        Self::desk(Framework::Simclr)
    }
}

impl FrameworkConfig {
    /// Small heads and queue for CPU-scale runs.
    pub fn desk(framework: Framework) -> Self {
        Self {
            framework,
            temperature: 0.5,
            momentum: 0.99,
            queue_capacity: 64,
            ema_decay: 0.99,
            symmetrize_byol: false,
            byol_target_init: TargetInit::CopyOfOnline,
            projection_hidden: 128,
            latent_dim: 64,
            predictor_hidden: 128,
            head_batch_norm: true,
        }
    }

    /// Head widths, queue size, and momentum at full scale.
    pub fn reference(framework: Framework) -> Self {
        let byol = framework == Framework::Byol;
        Self {
            framework,
            temperature: 0.5,
            momentum: 0.999,
            queue_capacity: 256,
            ema_decay: 0.99,
            symmetrize_byol: false,
            byol_target_init: TargetInit::CopyOfOnline,
            projection_hidden: if byol { 4096 } else { 2048 },
            latent_dim: if byol { 256 } else { 128 },
            predictor_hidden: 4096,
            head_batch_norm: true,
        }
    }

    pub fn validate(&self, batch_size: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.temperature > 0.0) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1]", self.momentum));
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return bad(format!("ema decay {} outside [0, 1]", self.ema_decay));
        }
        if self.framework == Framework::Moco && self.queue_capacity < batch_size {
            return bad(format!("queue capacity {} smaller than batch size {batch_size}", self.queue_capacity));
        }
        if self.projection_hidden == 0 || self.latent_dim == 0 || self.predictor_hidden == 0 {
            return bad("head widths must be positive".into());
        }
        Ok(())
    }

    /// Heads of the trainable tower, in application order.
    pub fn head_specs(&self, feature_dim: usize) -> Result<Vec<HeadSpec>> {
        let bn = self.head_batch_norm;
        let proj = |kind| {
            HeadSpec::projection(kind, feature_dim, self.projection_hidden, self.latent_dim).map(|h| h.with_batch_norm(bn))
        };
        Ok(match self.framework {
            Framework::Simclr => vec![proj(HeadKind::SimclrProjection)?],
            Framework::Moco => vec![proj(HeadKind::MocoProjection)?],
            Framework::Byol => vec![
                proj(HeadKind::ByolProjection)?,
                HeadSpec::projection(HeadKind::ByolPredictor, self.latent_dim, self.predictor_hidden, self.latent_dim)?
                    .with_batch_norm(bn),
            ],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub master_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self { epochs: 20, learning_rate: 1e-3, weight_decay: 1e-4, batch_size: 32, master_seed: 0 }
    }

    pub fn reference() -> Self {
        Self { epochs: 50, learning_rate: 1e-3, weight_decay: 1e-4, batch_size: 192, master_seed: 0 }
    }

    pub fn validate(&self, framework: Framework) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::Config("learning rate must be positive and weight decay non-negative".into()));
        }
        if framework == Framework::Simclr && self.batch_size < 2 {
            return Err(Error::Config("simclr needs a batch size of at least 2".into()));
        }
        Ok(())
    }

    /// `(batch, steps_per_epoch)` for `n` training images: the batch never
    /// exceeds the data and a trailing partial batch is dropped.
    pub fn schedule(&self, n: usize) -> (usize, usize) {
        let b = self.batch_size.min(n).max(1);
        (b, (n / b).max(1))
    }
}
