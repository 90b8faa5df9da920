//! Contrastive and bootstrap objectives with analytic gradients.
//!
//! Every loss takes raw (unnormalized) rows and returns the gradient with
//! respect to those raw rows, so callers can backpropagate straight into a
//! head.

use super::queue::KeyQueue;
use crate::error::{Error, Result};
use crate::net::{dot, norm, Matrix, Scalar};

/// Cosine of the angle between `x` and `y`.
pub fn cosine_similarity<T: Scalar>(x: &[T], y: &[T]) -> Result<T> {
    let (nx, ny) = (norm(x), norm(y));
    if nx == T::zero() || ny == T::zero() {
        return Err(Error::ZeroVector);
    }
    Ok(dot(x, y) / (nx * ny))
}

/// Unit vector and original norm.
pub(crate) fn normalize<T: Scalar>(x: &[T]) -> Result<(Vec<T>, T)> {
    let n = norm(x);
    if n == T::zero() || !n.is_finite() {
        return Err(Error::ZeroVector);
    }
    Ok((x.iter().map(|&v| v / n).collect(), n))
}

/// Pull a gradient taken w.r.t. a unit vector back to the raw vector it came from.
fn through_normalization<T: Scalar>(unit: &[T], raw_norm: T, d_unit: &[T]) -> Vec<T> {
    let proj = dot(unit, d_unit);
    unit.iter().zip(d_unit).map(|(&u, &d)| (d - u * proj) / raw_norm).collect()
}

fn logsumexp<T: Scalar>(xs: impl Iterator<Item = T> + Clone) -> T {
    let m = xs.clone().fold(None::<T>, |acc, v| Some(acc.map_or(v, |a| a.max(v)))).expect("non-empty");
    m + xs.map(|v| (v - m).exp()).sum::<T>().ln()
}

/// Normalized temperature-scaled cross entropy over `2N` rows paired as
/// `(2i, 2i + 1)`. For each anchor the partner is the positive and every
/// other row a negative; the result is the mean over all `2N` anchors.
pub fn nt_xent_loss<T: Scalar>(latents: &Matrix<T>, temperature: f64) -> Result<(T, Matrix<T>)> {
    let n2 = latents.rows();
    if n2 < 2 || n2 % 2 != 0 {
        return Err(Error::ShapeMismatch(format!("NT-Xent needs an even number (>= 2) of rows, got {n2}")));
    }
    if temperature <= 0.0 {
        return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
    }
    let inv_tau = T::from_f64(1.0 / temperature);
    let d = latents.cols();
    let mut units = Matrix::zeros(n2, d);
    let mut norms = Vec::with_capacity(n2);
    for i in 0..n2 {
        let (u, n) = normalize(latents.row(i))?;
        units.row_mut(i).copy_from_slice(&u);
        norms.push(n);
    }
    // scaled similarity matrix
    let mut sim = vec![T::zero(); n2 * n2];
    T::gemm(n2, d, n2, inv_tau, units.as_slice(), d as isize, 1, units.as_slice(), 1, d as isize, T::zero(), &mut sim, n2 as isize, 1);

    let scale = T::from_f64(1.0 / n2 as f64);
    let mut loss = T::zero();
    // g[i][k] = d loss / d sim[i][k]
    let mut g = vec![T::zero(); n2 * n2];
    for i in 0..n2 {
        let j = i ^ 1;
        let row = &sim[i * n2..(i + 1) * n2];
        let others = row.iter().enumerate().filter(|&(k, _)| k != i).map(|(_, &v)| v);
        let lse = logsumexp(others);
        loss += lse - row[j];
        for k in (0..n2).filter(|&k| k != i) {
            g[i * n2 + k] = (row[k] - lse).exp() * scale;
        }
        g[i * n2 + j] -= scale;
    }
    loss *= scale;

    // d unit_i = inv_tau * sum_k (g[i][k] + g[k][i]) unit_k
    let mut sym = vec![T::zero(); n2 * n2];
    for i in 0..n2 {
        for k in 0..n2 {
            sym[i * n2 + k] = g[i * n2 + k] + g[k * n2 + i];
        }
    }
    let mut du = vec![T::zero(); n2 * d];
    T::gemm(n2, n2, d, inv_tau, &sym, n2 as isize, 1, units.as_slice(), d as isize, 1, T::zero(), &mut du, d as isize, 1);
    let mut grad = Matrix::zeros(n2, d);
    for i in 0..n2 {
        let dz = through_normalization(units.row(i), norms[i], &du[i * d..(i + 1) * d]);
        grad.row_mut(i).copy_from_slice(&dz);
    }
    Ok((loss, grad))
}

/// InfoNCE for one query against its positive key and a set of unit-norm
/// negatives. Returns the loss and its gradient w.r.t. the raw query only.
pub fn info_nce_against<'a, T: Scalar>(
    query: &[T],
    positive_key: &[T],
    negatives: impl Iterator<Item = &'a [T]> + Clone,
    temperature: f64,
) -> Result<(T, Vec<T>)> {
    if temperature <= 0.0 {
        return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
    }
    let inv_tau = T::from_f64(1.0 / temperature);
    let (q, qn) = normalize(query)?;
    let (k, _) = normalize(positive_key)?;
    let pos = dot(&q, &k) * inv_tau;
    let neg: Vec<T> = negatives.clone().map(|n| dot(&q, n) * inv_tau).collect();
    if neg.is_empty() {
        return Err(Error::EmptyQueue);
    }
    let lse = logsumexp(std::iter::once(pos).chain(neg.iter().copied()));
    let loss = lse - pos;
    // d loss / d q_unit = inv_tau * ((p_pos - 1) k + sum_n p_n n)
    let mut dq: Vec<T> = k.iter().map(|&v| v * ((pos - lse).exp() - T::one())).collect();
    for (n, &l) in negatives.zip(&neg) {
        let w = (l - lse).exp();
        for (a, &b) in dq.iter_mut().zip(n) {
            *a += w * b;
        }
    }
    for v in dq.iter_mut() {
        *v *= inv_tau;
    }
    Ok((loss, through_normalization(&q, qn, &dq)))
}

/// MoCo's InfoNCE: the queue's keys are the negatives. No gradient reaches
/// the positive key or the queue.
pub fn moco_info_nce<T: Scalar>(
    query: &[T],
    positive_key: &[T],
    queue: &KeyQueue<T>,
    temperature: f64,
) -> Result<(T, Vec<T>)> {
    if queue.is_empty() {
        return Err(Error::EmptyQueue);
    }
    info_nce_against(query, positive_key, queue.iter(), temperature)
}

/// Mean InfoNCE over a batch of queries, each paired with the key in the same row.
/// With an empty queue, the other rows' keys serve as negatives instead.
pub fn moco_info_nce_batch<T: Scalar>(
    queries: &Matrix<T>,
    keys: &Matrix<T>,
    queue: &KeyQueue<T>,
    temperature: f64,
) -> Result<(T, Matrix<T>)> {
    if queries.rows() != keys.rows() || queries.cols() != keys.cols() {
        return Err(Error::ShapeMismatch("queries and keys differ in shape".into()));
    }
    let b = queries.rows();
    let scale = T::from_f64(1.0 / b as f64);
    let mut total = T::zero();
    let mut grad = Matrix::zeros(b, queries.cols());
    let unit_keys = if queue.is_empty() {
        if b < 2 {
            return Err(Error::EmptyQueue);
        }
        Some(keys.iter_rows().map(|k| normalize(k).map(|(u, _)| u)).collect::<Result<Vec<_>>>()?)
    } else {
        None
    };
    for i in 0..b {
        let (l, g) = match &unit_keys {
            None => moco_info_nce(queries.row(i), keys.row(i), queue, temperature)?,
            Some(units) => info_nce_against(
                queries.row(i),
                keys.row(i),
                units.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, u)| u.as_slice()),
                temperature,
            )?,
        };
        total += l;
        for (a, b) in grad.row_mut(i).iter_mut().zip(g) {
            *a = b * scale;
        }
    }
    Ok((total * scale, grad))
}

/// Normalized squared error `|p/|p| - z/|z||^2 = 2 - 2 cos(p, z)`, with the
/// gradient w.r.t. the raw prediction only.
pub fn byol_loss<T: Scalar>(prediction: &[T], target: &[T]) -> Result<(T, Vec<T>)> {
    let (p, pn) = normalize(prediction)?;
    let (z, _) = normalize(target)?;
    let two = T::from_f64(2.0);
    let loss = p.iter().zip(&z).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>();
    let d_unit: Vec<T> = z.iter().map(|&v| -two * v).collect();
    Ok((loss, through_normalization(&p, pn, &d_unit)))
}

/// Mean [`byol_loss`] over paired rows.
pub fn byol_loss_batch<T: Scalar>(predictions: &Matrix<T>, targets: &Matrix<T>) -> Result<(T, Matrix<T>)> {
    if predictions.rows() != targets.rows() || predictions.cols() != targets.cols() {
        return Err(Error::ShapeMismatch("predictions and targets differ in shape".into()));
    }
    let b = predictions.rows();
    let scale = T::from_f64(1.0 / b as f64);
    let mut total = T::zero();
    let mut grad = Matrix::zeros(b, predictions.cols());
    for i in 0..b {
        let (l, g) = byol_loss(predictions.row(i), targets.row(i))?;
        total += l;
        for (a, v) in grad.row_mut(i).iter_mut().zip(g) {
            *a = v * scale;
        }
    }
    Ok((total * scale, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::relative_error;

    /// Direct evaluation of the pairwise objective with no stabilization.
    fn nt_xent_oracle(rows: &[Vec<f64>], tau: f64) -> f64 {
        let n2 = rows.len();
        let cos = |a: &[f64], b: &[f64]| {
            let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            d / (na * nb)
        };
        let mut total = 0.0;
        for i in 0..n2 {
            let j = i ^ 1;
            let num = (cos(&rows[i], &rows[j]) / tau).exp();
            let den: f64 = (0..n2).filter(|&k| k != i).map(|k| (cos(&rows[i], &rows[k]) / tau).exp()).sum();
            total += -(num / den).ln();
        }
        total / n2 as f64
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c: f64 = cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((c - 0.70711).abs() < 1e-5);
        assert!(matches!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroVector)));
    }

    #[test]
    fn nt_xent_single_aligned_pair_is_zero() {
        let z = Matrix::from_rows(&[[1.0f64, 0.0], [1.0, 0.0]]);
        let (l, _) = nt_xent_loss(&z, 1.0).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn nt_xent_hand_example() {
        let z = Matrix::from_rows(&[[1.0f64, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]);
        let (l, _) = nt_xent_loss(&z, 0.5).unwrap();
        let hand = (1.0 + 2.0 * (-2.0f64).exp()).ln();
        assert!((hand - 0.23954).abs() < 1e-4);
        assert!((l - hand).abs() < 1e-12);
        let rows: Vec<Vec<f64>> = z.iter_rows().map(|r| r.to_vec()).collect();
        assert!((l - nt_xent_oracle(&rows, 0.5)).abs() < 1e-12);
    }

    #[test]
    fn nt_xent_rejects_odd_rows_and_zero_rows() {
        let odd = Matrix::from_rows(&[[1.0f64, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        assert!(nt_xent_loss(&odd, 0.5).is_err());
        let zero = Matrix::from_rows(&[[1.0f64, 0.0], [0.0, 0.0]]);
        assert!(matches!(nt_xent_loss(&zero, 0.5), Err(Error::ZeroVector)));
    }

    #[test]
    fn nt_xent_gradient_matches_finite_differences() {
        let mut rng = crate::rng::seeded(11);
        use rand::Rng;
        let mut z = Matrix::from_vec(6, 5, (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let (_, g) = nt_xent_loss(&z, 0.3).unwrap();
        let h = 1e-6;
        for idx in 0..30 {
            let orig = z.as_slice()[idx];
            z.as_mut_slice()[idx] = orig + h;
            let lp = nt_xent_loss(&z, 0.3).unwrap().0;
            z.as_mut_slice()[idx] = orig - h;
            let lm = nt_xent_loss(&z, 0.3).unwrap().0;
            z.as_mut_slice()[idx] = orig;
            let num = (lp - lm) / (2.0 * h);
            assert!(relative_error(g.as_slice()[idx], num, 1e-7) < 1e-6, "coord {idx}");
        }
    }

    #[test]
    fn info_nce_hand_examples() {
        let mut q = KeyQueue::new(8).unwrap();
        q.push_batch(&Matrix::from_rows(&[[0.0f64, 1.0]])).unwrap();
        let (l, _) = moco_info_nce(&[1.0, 0.0], &[1.0, 0.0], &q, 1.0).unwrap();
        assert!((l - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-12);
        assert!((l - 0.31326).abs() < 1e-5);

        for m in [1usize, 3, 7] {
            let mut q = KeyQueue::new(8).unwrap();
            q.push_batch(&Matrix::from_rows(&vec![[0.0f64, 2.0]; m])).unwrap();
            let (l, _) = moco_info_nce(&[1.0, 0.0], &[1.0, 0.0], &q, 1.0).unwrap();
            assert!((l - (1.0 + m as f64 * (-1.0f64).exp()).ln()).abs() < 1e-12);
        }
        let empty = KeyQueue::<f64>::new(4).unwrap();
        assert!(matches!(moco_info_nce(&[1.0, 0.0], &[1.0, 0.0], &empty, 1.0), Err(Error::EmptyQueue)));
    }

    #[test]
    fn byol_examples() {
        assert_eq!(byol_loss(&[0.3f64, 0.4], &[0.3, 0.4]).unwrap().0.abs() < 1e-15, true);
        assert!((byol_loss(&[1.0f64, 0.0], &[0.0, 1.0]).unwrap().0 - 2.0).abs() < 1e-15);
        assert!(byol_loss(&[2.0f64, 0.0], &[1.0, 0.0]).unwrap().0.abs() < 1e-15);
        assert!(matches!(byol_loss(&[0.0f64, 0.0], &[1.0, 0.0]), Err(Error::ZeroVector)));
    }

    #[test]
    fn byol_gradient_matches_finite_differences() {
        let p = [0.3f64, -1.2, 0.7];
        let z = [1.0f64, 0.5, -0.2];
        let (_, g) = byol_loss(&p, &z).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            let mut a = p;
            let mut b = p;
            a[i] += h;
            b[i] -= h;
            let num = (byol_loss(&a, &z).unwrap().0 - byol_loss(&b, &z).unwrap().0) / (2.0 * h);
            assert!(relative_error(g[i], num, 1e-7) < 1e-6);
        }
    }
}
