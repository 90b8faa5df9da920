use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Exponential smoothing factor applied to the sweep's losses.
pub const LR_SMOOTHING: f64 = 0.98;

/// Leading fraction of the sweep excluded from the steepest-descent search,
/// where the smoothed loss is still dominated by mini-batch noise.
pub const LR_SKIP_START: f64 = 0.1;

/// Something that can take one optimization step at a given learning rate.
pub trait SweepModel {
    /// Update with learning rate `lr` on mini-batch `step`, then return the
    /// loss on that mini-batch.
    fn step(&mut self, step: usize, lr: f64) -> Result<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub lr: f64,
    pub loss: f64,
    pub smoothed_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LrSweep {
    pub rows: Vec<SweepRow>,
    pub suggestion: f64,
    /// First row whose smoothed loss exceeded four times the best so far.
    pub diverged_at: Option<usize>,
}

impl LrSweep {
    pub fn csv(&self) -> String {
        let mut s = String::from("lr,loss,smoothed_loss\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{}", r.lr, r.loss, r.smoothed_loss);
        }
        s
    }
}

/// Geometric learning-rate sweep from `range.0` to `range.1` with one step
/// per value. The suggestion is the rate where the smoothed loss falls
/// fastest, considering only rows up to the lowest smoothed loss before
/// divergence and after the first [`LR_SKIP_START`] of the sweep.
pub fn lr_find<M: SweepModel + ?Sized>(model: &mut M, range: (f64, f64), steps: usize) -> Result<LrSweep> {
    let (lo, hi) = range;
    if !(lo > 0.0 && lo < hi) {
        return Err(Error::Config(format!("lr range ({lo}, {hi}) must satisfy 0 < min < max")));
    }
    if steps < 10 {
        return Err(Error::Config(format!("lr sweep needs at least 10 steps, got {steps}")));
    }
    let ratio = hi / lo;
    let mut rows = Vec::with_capacity(steps);
    let mut avg = 0.0;
    let mut best = f64::INFINITY;
    let mut diverged_at = None;
    for i in 0..steps {
        let lr = if i + 1 == steps { hi } else { lo * ratio.powf(i as f64 / (steps - 1) as f64) };
        let loss = model.step(i, lr)?;
        let loss = if loss.is_finite() { loss } else { f64::INFINITY };
        avg = LR_SMOOTHING * avg + (1.0 - LR_SMOOTHING) * loss;
        let smoothed = avg / (1.0 - LR_SMOOTHING.powi(i as i32 + 1));
        if diverged_at.is_none() && (!smoothed.is_finite() || smoothed > 4.0 * best) {
            diverged_at = Some(i);
        }
        best = best.min(smoothed);
        rows.push(SweepRow { lr, loss, smoothed_loss: smoothed });
    }
    let before = &rows[..diverged_at.unwrap_or(rows.len())];
    let lowest = before.iter().enumerate().min_by(|a, b| a.1.smoothed_loss.total_cmp(&b.1.smoothed_loss)).map(|(i, _)| i);
    let end = lowest.map_or(0, |i| i + 1);
    let mut start = (steps as f64 * LR_SKIP_START) as usize;
    if end < start + 2 {
        start = 0;
    }
    let steepest = rows[start..end]
        .windows(2)
        .enumerate()
        .map(|(i, w)| (start + i, w[1].smoothed_loss - w[0].smoothed_loss))
        .filter(|&(_, d)| d < 0.0)
        .min_by(|a, b| a.1.total_cmp(&b.1));
    let (i, _) = steepest.ok_or(Error::AllDiverged)?;
    Ok(LrSweep { suggestion: rows[i].lr, rows, diverged_at })
}
