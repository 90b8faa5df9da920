//! Finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::Rng;

use super::{Grads, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Number of trainable scalars to probe (all of them if fewer exist).
    pub samples: usize,
    /// Central-difference step.
    pub step: f64,
    /// Largest acceptable relative error.
    pub tolerance: f64,
    /// Denominator floor for the relative error, so exact zeros compare absolutely.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { samples: 200, step: 1e-5, tolerance: 1e-4, floor: 1e-5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// `(parameter, offset, analytic, numeric)` at the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
    /// Largest analytic gradient magnitude over frozen entries.
    pub frozen_max_abs_grad: f64,
    pub frozen_entries: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance && self.frozen_max_abs_grad == 0.0
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compare `loss_fn`'s analytic gradient with central differences on a
/// random subsample of trainable coordinates.
pub fn gradient_check<F, R>(loss_fn: F, params: &ParamStore<f64>, config: GradCheckConfig, rng: &mut R) -> GradCheckReport
where
    F: Fn(&ParamStore<f64>) -> (f64, Grads<f64>),
    R: Rng + ?Sized,
{
    let (_, analytic) = loss_fn(params);

    let mut frozen_max = 0.0f64;
    let mut frozen_entries = 0;
    let mut coords = Vec::new();
    for i in 0..params.len() {
        let (_, p) = params.param_at(i);
        if p.frozen {
            frozen_entries += 1;
            for &g in &analytic.slots[i] {
                frozen_max = frozen_max.max(g.abs());
            }
        } else {
            coords.extend((0..p.len()).map(|o| (i, o)));
        }
    }

    let picks: Vec<(usize, usize)> = if coords.len() <= config.samples {
        coords
    } else {
        let mut idx = sample(rng, coords.len(), config.samples).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|k| coords[k]).collect()
    };

    let mut work = params.clone();
    let mut max_err = 0.0f64;
    let mut worst = None;
    for &(i, o) in &picks {
        let orig = work.param_at(i).1.values[o];
        work.param_at_mut(i).1.values[o] = orig + config.step;
        let plus = loss_fn(&work).0;
        work.param_at_mut(i).1.values[o] = orig - config.step;
        let minus = loss_fn(&work).0;
        work.param_at_mut(i).1.values[o] = orig;
        let numeric = (plus - minus) / (2.0 * config.step);
        let a = analytic.get(i, o);
        let err = relative_error(a, numeric, config.floor);
        if worst.is_none() || err > max_err {
            max_err = err;
            worst = Some((work.param_at(i).0.to_string(), o, a, numeric));
        }
    }

    GradCheckReport {
        checked: picks.len(),
        max_rel_error: max_err,
        worst,
        frozen_max_abs_grad: frozen_max,
        frozen_entries,
        tolerance: config.tolerance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::ParamRole;

    fn quadratic(p: &ParamStore<f64>) -> (f64, Grads<f64>) {
        let mut g = Grads::zeros_like(p);
        let mut loss = 0.0;
        for i in 0..p.len() {
            let (_, param) = p.param_at(i);
            for (o, &w) in param.values.iter().enumerate() {
                loss += 0.5 * w * w;
                if !param.frozen {
                    g.slots[i][o] = w;
                }
            }
        }
        (loss, g)
    }

    fn store(rng: &mut impl Rng) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let w: Vec<f64> = (0..300).map(|_| rng.gen_range(-3.0..3.0)).collect();
        s.insert("a", vec![300], w, ParamRole::Weight).unwrap();
        s.insert("frozen", vec![4], vec![1.0, -2.0, 3.0, 0.5], ParamRole::Weight).unwrap();
        s.set_frozen("frozen", true);
        s
    }

    #[test]
    fn quadratic_gradient_is_exact() {
        let mut rng = crate::rng::seeded(3);
        let s = store(&mut rng);
        let r = gradient_check(quadratic, &s, GradCheckConfig::default(), &mut rng);
        assert_eq!(r.checked, 200);
        assert!(r.max_rel_error <= 1e-5, "{r:?}");
        assert!(r.passed());
    }

    #[test]
    fn frozen_entries_report_zero_gradient() {
        let mut rng = crate::rng::seeded(4);
        let s = store(&mut rng);
        let r = gradient_check(quadratic, &s, GradCheckConfig::default(), &mut rng);
        assert_eq!(r.frozen_entries, 1);
        assert_eq!(r.frozen_max_abs_grad, 0.0);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let mut rng = crate::rng::seeded(5);
        let s = store(&mut rng);
        let wrong = |p: &ParamStore<f64>| {
            let (l, mut g) = quadratic(p);
            g.scale(1.01);
            (l, g)
        };
        let r = gradient_check(wrong, &s, GradCheckConfig::default(), &mut rng);
        assert!(!r.passed());
        assert!(r.max_rel_error > 5e-3);
    }
}
