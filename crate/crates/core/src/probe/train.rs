use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::lr_find::{lr_find, LrSweep, SweepModel};
use crate::contrastive::Tower;
use crate::error::{Error, Result};
use crate::net::layers::GradSink;
use crate::net::{init_head, Encoder, EncoderConfig, Grads, Head, HeadKind, HeadSpec, Matrix, ParamStore, Scalar};
use crate::optim::{Adam, AdamConfig};
use crate::raster::Image;
use crate::rng;

/// Probe learning rate when the range test finds no descending region.
pub const FALLBACK_LR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoLr {
    Auto,
}

/// A fixed rate, or `"auto"` to run the range test first.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LearningRate {
    Auto(AutoLr),
    Fixed(f64),
}

impl LearningRate {
    pub const AUTO: LearningRate = LearningRate::Auto(AutoLr::Auto);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub learning_rate: LearningRate,
    pub batch_size: usize,
    pub seed: u64,
    /// Train encoder and classifier together instead of probing frozen features.
    pub end_to_end: bool,
    pub lr_range: (f64, f64),
    pub lr_steps: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: LearningRate::AUTO,
            batch_size: 32,
            seed: 0,
            end_to_end: false,
            lr_range: (1e-5, 1.0),
            lr_steps: 100,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("probe epochs and batch size must be positive".into()));
        }
        if let LearningRate::Fixed(lr) = self.learning_rate {
            if !(lr > 0.0) {
                return Err(Error::Config(format!("probe learning rate must be positive, got {lr}")));
            }
        }
        Ok(())
    }
}

/// Labelled images for probe training and validation.
#[derive(Debug, Clone)]
pub struct ProbeData {
    pub train: Vec<(Image, usize)>,
    pub val: Vec<(Image, usize)>,
    pub class_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeEpoch {
    pub epoch: usize,
    pub train_acc: f64,
    pub train_loss: f64,
    pub val_acc: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct ProbeOutcome {
    /// Classifier parameters; in end-to-end mode also the trained encoder.
    pub params: ParamStore<f32>,
    pub curves: Vec<ProbeEpoch>,
    pub learning_rate: f64,
    pub sweep: Option<LrSweep>,
}

impl ProbeOutcome {
    pub fn curves_csv(&self) -> String {
        let mut s = String::from("epoch,train_acc,train_loss,val_acc,val_loss\n");
        for e in &self.curves {
            let _ = writeln!(s, "{},{},{},{},{}", e.epoch, e.train_acc, e.train_loss, e.val_acc, e.val_loss);
        }
        s
    }
}

pub fn classifier_spec(feature_dim: usize, classes: usize) -> Result<HeadSpec> {
    HeadSpec::linear_classifier(feature_dim, classes)
}

/// Mean softmax cross-entropy and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Matrix<T>, labels: &[usize]) -> Result<(T, Matrix<T>)> {
    if logits.rows() != labels.len() || logits.rows() == 0 {
        return Err(Error::ShapeMismatch(format!("{} logit rows for {} labels", logits.rows(), labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= logits.cols()) {
        return Err(Error::ShapeMismatch(format!("label {bad} with {} classes", logits.cols())));
    }
    let scale = T::from_f64(1.0 / labels.len() as f64);
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut total = T::zero();
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let m = row.iter().copied().fold(row[0], T::max);
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
        total += lse - row[y];
        for (g, &v) in grad.row_mut(i).iter_mut().zip(row) {
            *g = (v - lse).exp() * scale;
        }
        grad.row_mut(i)[y] -= scale;
    }
    Ok((total * scale, grad))
}

fn accuracy_and_loss(logits: &Matrix<f32>, labels: &[usize]) -> (f64, f64) {
    if labels.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let (loss, _) = softmax_cross_entropy(logits, labels).expect("validated shapes");
    let correct = labels.iter().enumerate().filter(|&(i, &y)| argmax(logits.row(i)) == y).count();
    (correct as f64 / labels.len() as f64, loss as f64)
}

fn argmax(row: &[f32]) -> usize {
    row.iter().enumerate().fold(0, |best, (i, &v)| if v > row[best] { i } else { best })
}

/// Cross-entropy of an encoder-plus-classifier tower on labelled inputs.
pub fn probe_objective<T: Scalar>(tower: &Tower, p: &ParamStore<T>, inputs: &[Vec<T>], labels: &[usize]) -> Result<(T, Grads<T>)> {
    let (logits, cache) = tower.forward(p, inputs);
    let (loss, dlogits) = softmax_cross_entropy(&logits, labels)?;
    let mut grads = Grads::zeros_like(p);
    tower.backward(p, &cache, &dlogits, &mut grads);
    Ok((loss, grads))
}

/// Class predictions from an encoder plus a `linear_classifier` head.
pub fn predict(encoder_config: &EncoderConfig, params: &ParamStore<f32>, images: &[Image]) -> Result<Vec<usize>> {
    let encoder = Encoder::new(encoder_config)?;
    let w = params
        .get(&format!("{}l0.weight", HeadKind::LinearClassifier.prefix()))
        .ok_or_else(|| Error::UnknownHead(HeadKind::LinearClassifier.to_string()))?;
    let spec = classifier_spec(encoder.feature_dim(), w.shape[0])?;
    spec.check_store(params)?;
    let tower = Tower::new(encoder, &[spec])?;
    let inputs: Vec<Vec<f32>> = images.iter().map(|i| tower.encoder.prepare(i)).collect();
    let logits = tower.embed(params, &inputs);
    Ok(logits.iter_rows().map(argmax).collect())
}

enum Mode {
    Frozen { head: Head, train: Matrix<f32>, val: Matrix<f32> },
    EndToEnd { tower: Tower, train: Vec<Vec<f32>>, val: Vec<Vec<f32>> },
}

impl Mode {
    fn objective(&self, p: &ParamStore<f32>, idx: &[usize], labels: &[usize]) -> Result<(f32, Grads<f32>)> {
        let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        match self {
            Mode::Frozen { head, train, .. } => {
                let x = Matrix::from_rows(&idx.iter().map(|&i| train.row(i)).collect::<Vec<_>>());
                let (logits, cache) = head.forward(p, &x);
                let (loss, d) = softmax_cross_entropy(&logits, &y)?;
                let mut grads = Grads::zeros_like(p);
                head.backward(&mut GradSink::new(p, &mut grads), p, &cache, &d, false);
                Ok((loss, grads))
            }
            Mode::EndToEnd { tower, train, .. } => {
                let x: Vec<Vec<f32>> = idx.iter().map(|&i| train[i].clone()).collect();
                probe_objective(tower, p, &x, &y)
            }
        }
    }

    fn logits(&self, p: &ParamStore<f32>, val: bool) -> Matrix<f32> {
        match self {
            Mode::Frozen { head, train, val: v } => head.forward(p, if val { v } else { train }).0,
            Mode::EndToEnd { tower, train, val: v } => tower.embed(p, if val { v } else { train }),
        }
    }
}

struct Sweep<'a> {
    mode: &'a Mode,
    params: ParamStore<f32>,
    adam: Adam<f32>,
    batches: Vec<Vec<usize>>,
    labels: &'a [usize],
}

impl SweepModel for Sweep<'_> {
    fn step(&mut self, step: usize, lr: f64) -> Result<f64> {
        let idx = &self.batches[step % self.batches.len()];
        let (_, grads) = self.mode.objective(&self.params, idx, self.labels)?;
        self.adam.step_with_lr(&mut self.params, &grads, lr);
        Ok(self.mode.objective(&self.params, idx, self.labels)?.0 as f64)
    }
}

fn batches(n: usize, size: usize, rng: &mut rng::Stream) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(size.max(1)).map(<[usize]>::to_vec).collect()
}

struct Setup {
    mode: Mode,
    trainable: ParamStore<f32>,
    train_labels: Vec<usize>,
    val_labels: Vec<usize>,
}

fn setup(encoder_params: &ParamStore<f32>, encoder_config: &EncoderConfig, data: &ProbeData, config: &ProbeConfig) -> Result<Setup> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(Error::InsufficientData("probe train set is empty".into()));
    }
    if let Some(&(_, bad)) = data.train.iter().chain(&data.val).find(|(_, y)| *y >= data.class_count) {
        return Err(Error::ShapeMismatch(format!("label {bad} with {} classes", data.class_count)));
    }
    let encoder = Encoder::new(encoder_config)?;
    let spec = classifier_spec(encoder.feature_dim(), data.class_count)?;
    let prefix = HeadKind::LinearClassifier.prefix();

    let mut params = encoder_params.clone();
    let existing = params.subset(&prefix);
    params.remove_prefix(&prefix);
    if params.iter().any(|(n, _)| n.starts_with("head.")) {
        return Err(Error::Config("strip projection heads before probing".into()));
    }
    let classifier = if existing.is_empty() {
        let mut fresh = init_head(&spec, &mut rng::stream(config.seed, &[1]))?;
        for i in 0..fresh.len() {
            fresh.param_at_mut(i).1.values.fill(0.0);
        }
        fresh
    } else {
        spec.check_store(&existing)?;
        existing
    };

    let prep = |set: &[(Image, usize)]| -> Vec<Vec<f32>> { set.iter().map(|(i, _)| encoder.prepare(i)).collect() };
    let (mode, trainable) = if config.end_to_end {
        params.set_frozen("enc.", false);
        params.merge(classifier)?;
        let tower = Tower::new(encoder.clone(), &[spec])?;
        (Mode::EndToEnd { tower, train: prep(&data.train), val: prep(&data.val) }, params)
    } else {
        if let Some((name, _)) = params.iter().find(|(_, p)| !p.frozen) {
            return Err(Error::Config(format!("encoder parameter {name} is not frozen")));
        }
        let train = encoder.features(&params, &prep(&data.train));
        let val = encoder.features(&params, &prep(&data.val));
        (Mode::Frozen { head: Head::new(&spec)?, train, val }, classifier)
    };
    Ok(Setup {
        mode,
        trainable,
        train_labels: data.train.iter().map(|(_, y)| *y).collect(),
        val_labels: data.val.iter().map(|(_, y)| *y).collect(),
    })
}

fn run_sweep(s: &Setup, config: &ProbeConfig) -> Result<LrSweep> {
    let mut model = Sweep {
        mode: &s.mode,
        params: s.trainable.clone(),
        adam: Adam::new(AdamConfig::new(config.lr_range.0, 0.0), &s.trainable),
        batches: batches(s.train_labels.len(), config.batch_size, &mut rng::stream(config.seed, &[2])),
        labels: &s.train_labels,
    };
    lr_find(&mut model, config.lr_range, config.lr_steps)
}

/// Learning-rate range test for the probe that [`train_probe`] would train.
pub fn probe_lr_sweep(
    encoder_params: &ParamStore<f32>,
    encoder_config: &EncoderConfig,
    data: &ProbeData,
    config: &ProbeConfig,
) -> Result<LrSweep> {
    run_sweep(&setup(encoder_params, encoder_config, data, config)?, config)
}

/// Train a linear classifier on top of `encoder_params`.
///
/// In the default mode the encoder must be frozen and its features are
/// computed once; the returned store holds only the classifier. With
/// `end_to_end` the encoder is trained too and returned alongside it.
pub fn train_probe(
    encoder_params: &ParamStore<f32>,
    encoder_config: &EncoderConfig,
    data: &ProbeData,
    config: &ProbeConfig,
) -> Result<ProbeOutcome> {
    let s = setup(encoder_params, encoder_config, data, config)?;
    let (learning_rate, sweep) = match config.learning_rate {
        LearningRate::Fixed(lr) => (lr, None),
        LearningRate::Auto(_) => match run_sweep(&s, config) {
            Ok(sw) => (sw.suggestion, Some(sw)),
            Err(Error::AllDiverged) => (FALLBACK_LR, None),
            Err(e) => return Err(e),
        },
    };

    let Setup { mode, mut trainable, train_labels, val_labels } = s;
    let mut adam = Adam::new(AdamConfig::new(learning_rate, 0.0), &trainable);
    let mut curves = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut shuffle = rng::stream(config.seed, &[3, epoch as u64]);
        for idx in batches(train_labels.len(), config.batch_size, &mut shuffle) {
            let (loss, grads) = mode.objective(&trainable, &idx, &train_labels)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { step: epoch + 1, detail: "probe cross-entropy".into() });
            }
            adam.step(&mut trainable, &grads);
        }
        let (train_acc, train_loss) = accuracy_and_loss(&mode.logits(&trainable, false), &train_labels);
        let (val_acc, val_loss) = accuracy_and_loss(&mode.logits(&trainable, true), &val_labels);
        curves.push(ProbeEpoch { epoch: epoch + 1, train_acc, train_loss, val_acc, val_loss });
    }
    Ok(ProbeOutcome { params: trainable, curves, learning_rate, sweep })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::relative_error;
    use crate::rng::seeded;
    use rand::Rng;

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut rng = seeded(5);
        let mut logits = Matrix::from_vec(4, 3, (0..12).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<f64>>());
        let labels = [0, 2, 1, 2];
        let (_, g) = softmax_cross_entropy(&logits, &labels).unwrap();
        let h = 1e-6;
        for k in 0..12 {
            let orig = logits.as_slice()[k];
            logits.as_mut_slice()[k] = orig + h;
            let lp = softmax_cross_entropy(&logits, &labels).unwrap().0;
            logits.as_mut_slice()[k] = orig - h;
            let lm = softmax_cross_entropy(&logits, &labels).unwrap().0;
            logits.as_mut_slice()[k] = orig;
            assert!(relative_error(g.as_slice()[k], (lp - lm) / (2.0 * h), 1e-7) < 1e-6);
        }
    }

    #[test]
    fn uniform_logits_give_log_class_count() {
        let (l, _) = softmax_cross_entropy(&Matrix::from_rows(&[[0.0f64; 5]]), &[3]).unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-12);
        assert!(softmax_cross_entropy(&Matrix::from_rows(&[[0.0f64; 2]]), &[2]).is_err());
    }

    #[test]
    fn learning_rate_serde() {
        assert_eq!(serde_json::to_string(&LearningRate::AUTO).unwrap(), "\"auto\"");
        assert_eq!(serde_json::from_str::<LearningRate>("0.01").unwrap(), LearningRate::Fixed(0.01));
        assert_eq!(serde_json::from_str::<LearningRate>("\"auto\"").unwrap(), LearningRate::AUTO);
    }
}
