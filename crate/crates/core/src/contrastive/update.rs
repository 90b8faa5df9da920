use crate::error::Result;
use crate::net::{ParamStore, Scalar};

/// `target <- m * target + (1 - m) * source`, elementwise over identically
/// laid out stores. The source is never modified.
pub fn momentum_update<T: Scalar>(target: &mut ParamStore<T>, source: &ParamStore<T>, m: f64) -> Result<()> {
    target.check_same_layout(source)?;
    let keep = T::from_f64(m);
    let take = T::from_f64(1.0 - m);
    for i in 0..target.len() {
        let src = &source.param_at(i).1.values;
        for (t, &s) in target.param_at_mut(i).1.values.iter_mut().zip(src) {
            *t = keep * *t + take * s;
        }
    }
    Ok(())
}

/// BYOL's target update; the same map as [`momentum_update`].
pub fn ema_update<T: Scalar>(target: &mut ParamStore<T>, online: &ParamStore<T>, decay: f64) -> Result<()> {
    momentum_update(target, online, decay)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::ParamRole;

    fn scalar_store(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("w", vec![1], vec![v], ParamRole::Weight).unwrap();
        s
    }

    #[test]
    fn direct_substitution() {
        let mut k = scalar_store(0.0);
        let q = scalar_store(1.0);
        momentum_update(&mut k, &q, 0.999).unwrap();
        assert!((k.values("w")[0] - 0.001).abs() < 1e-12);
        assert_eq!(q.values("w")[0], 1.0);
    }

    #[test]
    fn mismatched_layouts_are_rejected() {
        let mut a = scalar_store(0.0);
        let mut b = ParamStore::new();
        b.insert("w", vec![2], vec![0.0, 1.0], ParamRole::Weight).unwrap();
        assert!(momentum_update(&mut a, &b, 0.5).is_err());
    }
}
