//! Per-step objectives: forward a batch through an encoder and its heads,
//! evaluate a loss, and backpropagate into a fresh gradient buffer.

use super::loss::{byol_loss_batch, moco_info_nce_batch, nt_xent_loss};
use super::queue::KeyQueue;
use crate::error::{Error, Result};
use crate::net::layers::GradSink;
use crate::net::{Encoder, EncoderCache, Grads, Head, HeadCache, HeadSpec, Matrix, ParamStore, Scalar};

/// An encoder followed by a chain of heads.
#[derive(Debug, Clone)]
pub struct Tower {
    pub encoder: Encoder,
    pub heads: Vec<Head>,
}

pub struct TowerCache<T> {
    encoder: Vec<EncoderCache<T>>,
    heads: Vec<HeadCache<T>>,
}

impl Tower {
    pub fn new(encoder: Encoder, heads: &[HeadSpec]) -> Result<Self> {
        let mut dim = encoder.feature_dim();
        let mut bound = Vec::with_capacity(heads.len());
        for h in heads {
            if h.input_dim() != dim {
                return Err(Error::ShapeMismatch(format!("{} expects input {} but receives {dim}", h.kind, h.input_dim())));
            }
            dim = h.output_dim();
            bound.push(Head::new(h)?);
        }
        Ok(Self { encoder, heads: bound })
    }

    pub fn output_dim(&self) -> usize {
        self.heads.last().map_or(self.encoder.feature_dim(), |h| h.spec().output_dim())
    }

    pub fn forward<T: Scalar>(&self, p: &ParamStore<T>, inputs: &[Vec<T>]) -> (Matrix<T>, TowerCache<T>) {
        let (mut cur, encoder) = self.encoder.forward_batch(p, inputs);
        let mut heads = Vec::with_capacity(self.heads.len());
        for h in &self.heads {
            let (y, c) = h.forward(p, &cur);
            heads.push(c);
            cur = y;
        }
        (cur, TowerCache { encoder, heads })
    }

    /// Output rows without keeping caches.
    pub fn embed<T: Scalar>(&self, p: &ParamStore<T>, inputs: &[Vec<T>]) -> Matrix<T> {
        let mut cur = self.encoder.features(p, inputs);
        for h in &self.heads {
            cur = h.forward(p, &cur).0;
        }
        cur
    }

    /// Accumulate parameter gradients given `d loss / d output`.
    pub fn backward<T: Scalar>(&self, p: &ParamStore<T>, cache: &TowerCache<T>, dout: &Matrix<T>, grads: &mut Grads<T>) {
        let mut d = dout.clone();
        {
            let mut sink = GradSink::new(p, grads);
            for (h, c) in self.heads.iter().zip(&cache.heads).rev() {
                d = h.backward(&mut sink, p, c, &d, true).expect("dx requested");
            }
        }
        self.encoder.backward_batch(p, &cache.encoder, &d, grads);
    }
}

/// NT-Xent over views interleaved as `(a0, b0, a1, b1, ...)`.
pub fn simclr_objective<T: Scalar>(
    tower: &Tower,
    p: &ParamStore<T>,
    interleaved_views: &[Vec<T>],
    temperature: f64,
) -> Result<(T, Grads<T>)> {
    let (z, cache) = tower.forward(p, interleaved_views);
    let (loss, dz) = nt_xent_loss(&z, temperature)?;
    let mut grads = Grads::zeros_like(p);
    tower.backward(p, &cache, &dz, &mut grads);
    Ok((loss, grads))
}

/// InfoNCE of the query path against fixed keys and queue; gradients reach
/// only the query parameters.
pub fn moco_objective<T: Scalar>(
    tower: &Tower,
    p: &ParamStore<T>,
    query_views: &[Vec<T>],
    keys: &Matrix<T>,
    queue: &KeyQueue<T>,
    temperature: f64,
) -> Result<(T, Grads<T>)> {
    let (q, cache) = tower.forward(p, query_views);
    let (loss, dq) = moco_info_nce_batch(&q, keys, queue, temperature)?;
    let mut grads = Grads::zeros_like(p);
    tower.backward(p, &cache, &dq, &mut grads);
    Ok((loss, grads))
}

/// Normalized squared error between online predictions and fixed targets.
pub fn byol_objective<T: Scalar>(
    tower: &Tower,
    p: &ParamStore<T>,
    online_views: &[Vec<T>],
    targets: &Matrix<T>,
) -> Result<(T, Grads<T>)> {
    let (pred, cache) = tower.forward(p, online_views);
    let (loss, dp) = byol_loss_batch(&pred, targets)?;
    let mut grads = Grads::zeros_like(p);
    tower.backward(p, &cache, &dp, &mut grads);
    Ok((loss, grads))
}
