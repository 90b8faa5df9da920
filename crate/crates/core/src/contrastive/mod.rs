//! Contrastive objectives, the MoCo key queue, momentum/EMA updates, and
//! the pretraining loop.

mod config;
mod loss;
mod objective;
mod pretrain;
mod queue;
mod update;

pub use config::{Framework, FrameworkConfig, TargetInit, TrainConfig};
pub use loss::{
    byol_loss, byol_loss_batch, cosine_similarity, info_nce_against, moco_info_nce, moco_info_nce_batch, nt_xent_loss,
};
pub use objective::{byol_objective, moco_objective, simclr_objective, Tower, TowerCache};
pub use pretrain::{pretrain, pretrain_images, EpochSummary, PretrainOutcome, StepLoss};
pub use queue::{queue_push, KeyQueue};
pub use update::{ema_update, momentum_update};
