//! The shared self-supervised training loop.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;

use super::config::{Framework, FrameworkConfig, TargetInit, TrainConfig};
use super::objective::{byol_objective, moco_objective, simclr_objective, Tower};
use super::queue::KeyQueue;
use super::update::{ema_update, momentum_update};
use crate::augment::{make_views, AugmentationPolicy, ViewPair};
use crate::error::{Error, Result};
use crate::net::{init_params, Checkpoint, Encoder, EncoderConfig, HeadKind, Matrix, ParamStore};
use crate::optim::{Adam, AdamConfig};
use crate::raster::Image;
use crate::synthgen::{DatasetManifest, Split};
use crate::{par, rng};

const INIT_STREAM: u64 = 1;
const TARGET_STREAM: u64 = 2;
const SHUFFLE_STREAM: u64 = 3;
const VIEW_STREAM: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLoss {
    /// 1-based.
    pub epoch: usize,
    /// 1-based within the epoch.
    pub step: usize,
    pub loss: f32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub mean_loss: f64,
    pub steps: usize,
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    /// Trainable tower (encoder plus heads) after the last step.
    pub checkpoint: Checkpoint,
    pub steps: Vec<StepLoss>,
    pub epochs: Vec<EpochSummary>,
    /// MoCo key network or BYOL target network.
    pub companion: Option<ParamStore<f32>>,
    pub queue: Option<KeyQueue<f32>>,
}

impl PretrainOutcome {
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("epoch,step,loss\n");
        for r in &self.steps {
            let _ = writeln!(s, "{},{},{}", r.epoch, r.step, r.loss);
        }
        s
    }

    pub fn epoch_csv(&self) -> String {
        let mut s = String::from("epoch,mean_loss\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{},{}", e.epoch, e.mean_loss);
        }
        s
    }

    pub fn write_csvs(&self, loss_path: &Path, epoch_path: &Path) -> Result<()> {
        std::fs::write(loss_path, self.loss_csv()).map_err(|e| Error::io(loss_path, e))?;
        std::fs::write(epoch_path, self.epoch_csv()).map_err(|e| Error::io(epoch_path, e))
    }
}

/// Pretrain on the manifest's train split.
pub fn pretrain(
    framework: &FrameworkConfig,
    train: &TrainConfig,
    manifest: &DatasetManifest,
    policy: &AugmentationPolicy,
    encoder: &EncoderConfig,
) -> Result<PretrainOutcome> {
    let images: Vec<Image> = manifest.load(manifest.records_in(Split::Train))?.into_iter().map(|(i, _)| i).collect();
    pretrain_images(framework, train, &images, policy, encoder, &mut |_| {})
}

struct Run<'a> {
    fw: &'a FrameworkConfig,
    tower: Tower,
    params: ParamStore<f32>,
    adam: Adam<f32>,
    /// MoCo key tower or BYOL target tower (encoder plus projection).
    companion: Option<(Tower, ParamStore<f32>)>,
    queue: Option<KeyQueue<f32>>,
}

impl Run<'_> {
    /// One optimizer step; `global_step` is 1-based and only used for diagnostics.
    fn step(&mut self, pairs: &[ViewPair], global_step: usize) -> Result<f32> {
        let enc = &self.tower.encoder;
        let prep = |v: &Image| enc.prepare::<f32>(v);
        let mut keys: Option<Matrix<f32>> = None;
        let (loss, grads) = match self.fw.framework {
            Framework::Simclr => {
                let views: Vec<Vec<f32>> = pairs.iter().flat_map(|p| [prep(&p.view_a), prep(&p.view_b)]).collect();
                simclr_objective(&self.tower, &self.params, &views, self.fw.temperature)?
            }
            Framework::Moco => {
                let (key_tower, key_params) = self.companion.as_ref().expect("moco key network");
                let queue = self.queue.as_ref().expect("moco queue");
                let queries: Vec<Vec<f32>> = pairs.iter().map(|p| prep(&p.view_a)).collect();
                let key_in: Vec<Vec<f32>> = pairs.iter().map(|p| prep(&p.view_b)).collect();
                let k = key_tower.embed(key_params, &key_in);
                let out = moco_objective(&self.tower, &self.params, &queries, &k, queue, self.fw.temperature)?;
                keys = Some(k);
                out
            }
            Framework::Byol => {
                let (target_tower, target_params) = self.companion.as_ref().expect("byol target network");
                let mut online_in: Vec<Vec<f32>> = pairs.iter().map(|p| prep(&p.view_b)).collect();
                let mut target_in: Vec<Vec<f32>> = pairs.iter().map(|p| prep(&p.view_a)).collect();
                if self.fw.symmetrize_byol {
                    let (o, t) = (online_in.clone(), target_in.clone());
                    online_in.extend(t);
                    target_in.extend(o);
                }
                let targets = target_tower.embed(target_params, &target_in);
                let (mut loss, mut grads) = byol_objective(&self.tower, &self.params, &online_in, &targets)?;
                if self.fw.symmetrize_byol {
                    // the mean over both halves is half the sum of the two directional losses
                    loss *= 2.0;
                    grads.scale(2.0);
                }
                (loss, grads)
            }
        };
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step: global_step, detail: format!("{} loss = {loss}", self.fw.framework) });
        }
        if grads.slots.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { step: global_step, detail: "non-finite gradient".into() });
        }
        self.adam.step(&mut self.params, &grads);

        match self.fw.framework {
            Framework::Simclr => {}
            Framework::Moco => {
                let (_, key_params) = self.companion.as_mut().expect("moco key network");
                momentum_update(key_params, &self.params, self.fw.momentum)?;
                self.queue.as_mut().expect("moco queue").push_batch(&keys.expect("keys computed"))?;
            }
            Framework::Byol => {
                let (_, target_params) = self.companion.as_mut().expect("byol target network");
                let mut tracked = self.params.clone();
                tracked.remove_prefix(&HeadKind::ByolPredictor.prefix());
                ema_update(target_params, &tracked, self.fw.ema_decay)?;
            }
        }
        Ok(loss)
    }
}

/// Pretrain on in-memory images. `on_epoch` sees each epoch summary as it completes.
pub fn pretrain_images(
    fw: &FrameworkConfig,
    train: &TrainConfig,
    images: &[Image],
    policy: &AugmentationPolicy,
    encoder_config: &EncoderConfig,
    on_epoch: &mut dyn FnMut(&EpochSummary),
) -> Result<PretrainOutcome> {
    if images.is_empty() {
        return Err(Error::InsufficientData("the train split is empty".into()));
    }
    train.validate(fw.framework)?;
    policy.validate()?;
    encoder_config.validate()?;
    if policy.output_size != encoder_config.input_size {
        return Err(Error::Config(format!(
            "augmentation output size {} differs from encoder input size {}",
            policy.output_size, encoder_config.input_size
        )));
    }
    let (batch, steps_per_epoch) = train.schedule(images.len());
    fw.validate(batch)?;

    let seed = train.master_seed;
    let encoder = Encoder::new(encoder_config)?;
    let heads = fw.head_specs(encoder.feature_dim())?;
    let params = init_params(encoder_config, &heads, &mut rng::stream(seed, &[INIT_STREAM]))?;
    let tower = Tower::new(encoder.clone(), &heads)?;

    let (companion, queue) = match fw.framework {
        Framework::Simclr => (None, None),
        Framework::Moco => {
            let key_tower = Tower::new(encoder.clone(), &heads)?;
            (Some((key_tower, params.clone())), Some(KeyQueue::new(fw.queue_capacity)?))
        }
        Framework::Byol => {
            let target_heads = &heads[..1];
            let target_tower = Tower::new(encoder.clone(), target_heads)?;
            let target = match fw.byol_target_init {
                TargetInit::Independent => {
                    init_params(encoder_config, target_heads, &mut rng::stream(seed, &[TARGET_STREAM]))?
                }
                TargetInit::CopyOfOnline => {
                    let mut t = params.clone();
                    t.remove_prefix(&HeadKind::ByolPredictor.prefix());
                    t
                }
            };
            (Some((target_tower, target)), None)
        }
    };

    let adam = Adam::new(AdamConfig::new(train.learning_rate, train.weight_decay), &params);
    let mut run = Run { fw, tower, params, adam, companion, queue };

    let mut steps = Vec::with_capacity(train.epochs * steps_per_epoch);
    let mut epochs = Vec::with_capacity(train.epochs);
    let mut order: Vec<usize> = (0..images.len()).collect();
    for epoch in 0..train.epochs {
        let mut shuffle = rng::stream(seed, &[SHUFFLE_STREAM, epoch as u64]);
        order.shuffle(&mut shuffle);
        let mut total = 0.0f64;
        for s in 0..steps_per_epoch {
            let idx = &order[s * batch..(s + 1) * batch];
            let pairs = par::map(idx, |k, &i| {
                let mut r = rng::stream(seed, &[VIEW_STREAM, epoch as u64, s as u64, k as u64]);
                make_views(&images[i], policy, i, &mut r)
            });
            let loss = run.step(&pairs, epoch * steps_per_epoch + s + 1)?;
            total += loss as f64;
            steps.push(StepLoss { epoch: epoch + 1, step: s + 1, loss });
        }
        let summary = EpochSummary { epoch: epoch + 1, mean_loss: total / steps_per_epoch as f64, steps: steps_per_epoch };
        on_epoch(&summary);
        epochs.push(summary);
    }

    let config = serde_json::json!({
        "framework": fw,
        "train": train,
        "encoder": encoder_config,
        "augmentation": policy,
    });
    let checkpoint = Checkpoint { framework: fw.framework.to_string(), config, epoch: train.epochs, params: run.params };
    Ok(PretrainOutcome {
        checkpoint,
        steps,
        epochs,
        companion: run.companion.map(|(_, p)| p),
        queue: run.queue,
    })
}
