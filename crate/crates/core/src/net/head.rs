//! Projection, prediction, and classification heads.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::encoder::{linear_specs, Encoder, EncoderConfig, ParamSpec};
use super::layers::{relu_backward_in_place, relu_in_place, GradSink, Linear};
use super::{LatentBatch, Matrix, ParamRole, ParamStore, Scalar};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    SimclrProjection,
    MocoProjection,
    ByolProjection,
    ByolPredictor,
    LinearClassifier,
}

impl HeadKind {
    pub const ALL: [HeadKind; 5] = [
        HeadKind::SimclrProjection,
        HeadKind::MocoProjection,
        HeadKind::ByolProjection,
        HeadKind::ByolPredictor,
        HeadKind::LinearClassifier,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            HeadKind::SimclrProjection => "simclr_projection",
            HeadKind::MocoProjection => "moco_projection",
            HeadKind::ByolProjection => "byol_projection",
            HeadKind::ByolPredictor => "byol_predictor",
            HeadKind::LinearClassifier => "linear_classifier",
        }
    }

    /// Store-name prefix shared by every parameter of this head.
    pub fn prefix(self) -> String {
        format!("head.{}.", self.as_str())
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A head: linear layers with ReLU between them and none after the last.
/// `layer_dims` lists the input width followed by every layer's output width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub kind: HeadKind,
    pub layer_dims: Vec<usize>,
    /// Standardize each hidden unit across the batch before its ReLU.
    #[serde(default)]
    pub batch_norm: bool,
}

impl HeadSpec {
    pub fn new(kind: HeadKind, layer_dims: Vec<usize>) -> Result<Self> {
        let spec = Self { kind, layer_dims, batch_norm: false };
        spec.validate()?;
        Ok(spec)
    }

    /// Linear-ReLU-Linear projection for SimCLR or MoCo.
    pub fn projection(kind: HeadKind, input: usize, hidden: usize, latent: usize) -> Result<Self> {
        Self::new(kind, vec![input, hidden, latent])
    }

    /// 2048 -> 2048 -> 128, the reference SimCLR/MoCo projection.
    pub fn reference_projection(kind: HeadKind) -> Result<Self> {
        Self::new(kind, vec![2048, 2048, 128])
    }

    /// 2048 -> 4096 -> 256, the reference BYOL projection.
    pub fn reference_byol_projection() -> Result<Self> {
        Self::new(HeadKind::ByolProjection, vec![2048, 4096, 256])
    }

    pub fn linear_classifier(input: usize, classes: usize) -> Result<Self> {
        Self::new(HeadKind::LinearClassifier, vec![input, classes])
    }

    pub fn with_batch_norm(mut self, on: bool) -> Self {
        self.batch_norm = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.contains(&0) {
            return Err(Error::Config(format!("{} has a zero-width layer", self.kind)));
        }
        let layers = self.layer_dims.len().saturating_sub(1);
        let ok = match self.kind {
            HeadKind::LinearClassifier => layers == 1,
            _ => layers == 2,
        };
        if !ok {
            return Err(Error::Config(format!(
                "{} needs {} linear layers, got dims {:?}",
                self.kind,
                if self.kind == HeadKind::LinearClassifier { 1 } else { 2 },
                self.layer_dims
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("validated non-empty")
    }

    fn layers(&self) -> Vec<Linear> {
        self.layer_dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(&format!("head.{}.l{i}", self.kind), w[0], w[1]))
            .collect()
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        self.layers().iter().flat_map(linear_specs).collect()
    }

    /// Ok when the store holds this head with matching shapes.
    pub fn check_store<T: Scalar>(&self, params: &ParamStore<T>) -> Result<()> {
        for s in self.param_specs() {
            match params.get(&s.name) {
                None => return Err(Error::UnknownHead(self.kind.to_string())),
                Some(p) if p.shape != s.shape => {
                    return Err(Error::ShapeMismatch(format!("`{}` is {:?}, head expects {:?}", s.name, p.shape, s.shape)))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }
}

/// A bound head ready for forward/backward passes.
#[derive(Debug, Clone)]
pub struct Head {
    spec: HeadSpec,
    layers: Vec<Linear>,
}

/// Layer inputs and post-activation outputs recorded during forward.
#[derive(Debug, Clone)]
pub struct HeadCache<T> {
    inputs: Vec<Matrix<T>>,
    /// Per hidden layer: standardized values and per-unit inverse deviations.
    norms: Vec<Option<(Matrix<T>, Vec<T>)>>,
}

pub const BATCH_NORM_EPS: f64 = 1e-5;

fn standardize_columns<T: Scalar>(y: &mut Matrix<T>) -> Vec<T> {
    let (n, d) = (y.rows(), y.cols());
    let inv_n = T::from_f64(1.0 / n as f64);
    let mut mean = vec![T::zero(); d];
    for r in y.iter_rows() {
        for (m, &v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m *= inv_n);
    let mut var = vec![T::zero(); d];
    for r in y.iter_rows() {
        for ((s, &v), &m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let inv_std: Vec<T> = var.iter().map(|&s| T::one() / (s * inv_n + T::from_f64(BATCH_NORM_EPS)).sqrt()).collect();
    for i in 0..n {
        for ((v, &m), &k) in y.row_mut(i).iter_mut().zip(&mean).zip(&inv_std) {
            *v = (*v - m) * k;
        }
    }
    inv_std
}

/// Gradient through column standardization, in place.
fn standardize_backward<T: Scalar>(xhat: &Matrix<T>, inv_std: &[T], d: &mut Matrix<T>) {
    let (n, c) = (d.rows(), d.cols());
    let inv_n = T::from_f64(1.0 / n as f64);
    let mut mean_d = vec![T::zero(); c];
    let mut mean_dx = vec![T::zero(); c];
    for i in 0..n {
        for j in 0..c {
            let g = d.row(i)[j];
            mean_d[j] += g;
            mean_dx[j] += g * xhat.row(i)[j];
        }
    }
    for i in 0..n {
        let xr = xhat.row(i);
        for (j, g) in d.row_mut(i).iter_mut().enumerate() {
            *g = inv_std[j] * (*g - mean_d[j] * inv_n - xr[j] * mean_dx[j] * inv_n);
        }
    }
}

impl Head {
    pub fn new(spec: &HeadSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self { layers: spec.layers(), spec: spec.clone() })
    }

    pub fn spec(&self) -> &HeadSpec {
        &self.spec
    }

    pub fn forward<T: Scalar>(&self, p: &ParamStore<T>, x: &Matrix<T>) -> (Matrix<T>, HeadCache<T>) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut norms = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut y = l.forward(p, &cur);
            let mut norm = None;
            if i < last {
                if self.spec.batch_norm {
                    let inv_std = standardize_columns(&mut y);
                    norm = Some((y.clone(), inv_std));
                }
                relu_in_place(y.as_mut_slice());
            }
            inputs.push(cur);
            norms.push(norm);
            cur = y;
        }
        (cur, HeadCache { inputs, norms })
    }

    pub fn backward<T: Scalar>(
        &self,
        sink: &mut GradSink<'_, T>,
        p: &ParamStore<T>,
        cache: &HeadCache<T>,
        dy: &Matrix<T>,
        need_dx: bool,
    ) -> Option<Matrix<T>> {
        let mut d = dy.clone();
        for (i, l) in self.layers.iter().enumerate().rev() {
            if i + 1 < self.layers.len() {
                // the next layer's input is this layer's post-ReLU output
                relu_backward_in_place(cache.inputs[i + 1].as_slice(), d.as_mut_slice());
                if let Some((xhat, inv_std)) = &cache.norms[i] {
                    standardize_backward(xhat, inv_std, &mut d);
                }
            }
            let need = need_dx || i > 0;
            match l.backward(sink, p, &cache.inputs[i], &d, need) {
                Some(dx) => d = dx,
                None => return None,
            }
        }
        Some(d)
    }
}

/// Apply a head to a feature batch.
pub fn apply_head<T: Scalar>(params: &ParamStore<T>, spec: &HeadSpec, features: &Matrix<T>) -> Result<LatentBatch<T>> {
    if features.cols() != spec.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "{} expects {} input features, got {}",
            spec.kind,
            spec.input_dim(),
            features.cols()
        )));
    }
    spec.check_store(params)?;
    Ok(Head::new(spec)?.forward(params, features).0)
}

fn fill<R: Rng + ?Sized>(store: &mut ParamStore<f32>, specs: Vec<ParamSpec>, rng: &mut R) -> Result<()> {
    for s in specs {
        let n: usize = s.shape.iter().product();
        let values = match s.role {
            ParamRole::Bias => vec![0.0; n],
            ParamRole::Scale => vec![1.0; n],
            ParamRole::Weight => {
                let bound = (6.0 / s.fan_in as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-bound..bound) as f32).collect()
            }
        };
        store.insert(s.name, s.shape, values, s.role)?;
    }
    Ok(())
}

/// Fresh parameters for an encoder plus heads: weights drawn uniformly within
/// `±sqrt(6 / fan_in)`, biases zero, normalization gains one.
pub fn init_params<R: Rng + ?Sized>(config: &EncoderConfig, heads: &[HeadSpec], rng: &mut R) -> Result<ParamStore<f32>> {
    let encoder = Encoder::new(config)?;
    let mut store = ParamStore::new();
    fill(&mut store, encoder.param_specs(), rng)?;
    for h in heads {
        h.validate()?;
        fill(&mut store, h.param_specs(), rng)?;
    }
    Ok(store)
}

/// Fresh parameters for a head alone.
pub fn init_head<R: Rng + ?Sized>(spec: &HeadSpec, rng: &mut R) -> Result<ParamStore<f32>> {
    spec.validate()?;
    let mut store = ParamStore::new();
    fill(&mut store, spec.param_specs(), rng)?;
    Ok(store)
}

/// Remove a head and freeze every remaining encoder parameter.
pub fn strip_head_and_freeze<T: Scalar>(params: &ParamStore<T>, head: HeadKind) -> Result<ParamStore<T>> {
    let mut out = params.clone();
    if out.remove_prefix(&head.prefix()) == 0 {
        return Err(Error::UnknownHead(head.to_string()));
    }
    out.set_frozen("enc.", true);
    Ok(out)
}

/// Remove every head present and freeze the encoder.
pub fn strip_all_heads_and_freeze<T: Scalar>(params: &ParamStore<T>) -> ParamStore<T> {
    let mut out = params.clone();
    out.remove_prefix("head.");
    out.set_frozen("enc.", true);
    out
}
