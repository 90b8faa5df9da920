//! Adam with an L2 penalty folded into the gradient.

use serde::{Deserialize, Serialize};

use crate::net::{Grads, ParamStore, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        Self { learning_rate, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay }
    }
}

#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParamStore<T>) -> Self {
        let zeros: Vec<Vec<T>> = params.iter().map(|(_, p)| vec![T::zero(); p.len()]).collect();
        Self { config, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update with the configured learning rate; frozen entries are skipped.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &Grads<T>) {
        let lr = self.config.learning_rate;
        self.step_with_lr(params, grads, lr);
    }

    pub fn step_with_lr(&mut self, params: &mut ParamStore<T>, grads: &Grads<T>, lr: f64) {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let (ob1, ob2) = (T::from_f64(1.0 - c.beta1), T::from_f64(1.0 - c.beta2));
        let wd = T::from_f64(c.weight_decay);
        let step_size = T::from_f64(lr / bc1);
        let inv_bc2 = T::from_f64(1.0 / bc2);
        let eps = T::from_f64(c.eps);
        for i in 0..params.len() {
            let (_, p) = params.param_at_mut(i);
            if p.frozen {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (k, w) in p.values.iter_mut().enumerate() {
                let g = grads.slots[i][k] + wd * *w;
                m[k] = b1 * m[k] + ob1 * g;
                v[k] = b2 * v[k] + ob2 * g * g;
                *w -= step_size * m[k] / ((v[k] * inv_bc2).sqrt() + eps);
            }
        }
    }
}
