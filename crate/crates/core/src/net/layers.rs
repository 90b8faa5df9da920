//! Per-sample convolutional building blocks with explicit backward passes.

use super::{Grads, Matrix, ParamStore, Scalar};

/// Routes parameter gradients into a buffer, skipping frozen entries.
pub struct GradSink<'a, T> {
    store: &'a ParamStore<T>,
    grads: &'a mut Grads<T>,
}

impl<'a, T: Scalar> GradSink<'a, T> {
    pub fn new(store: &'a ParamStore<T>, grads: &'a mut Grads<T>) -> Self {
        Self { store, grads }
    }

    /// Gradient slot for `name`, or `None` when the parameter is frozen.
    pub fn slot(&mut self, name: &str) -> Option<&mut [T]> {
        let idx = self.store.slot(name);
        if self.store.param_at(idx).1.frozen {
            None
        } else {
            Some(self.grads.slot_mut(idx))
        }
    }
}

#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: String,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    pub fn out_dim(&self, n: usize) -> usize {
        (n + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        vec![self.cout, self.cin, self.kernel, self.kernel]
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }

    fn im2col<T: Scalar>(&self, x: &[T], h: usize, w: usize) -> Vec<T> {
        let (ho, wo) = (self.out_dim(h), self.out_dim(w));
        let k = self.kernel;
        let mut col = vec![T::zero(); self.cin * k * k * ho * wo];
        for c in 0..self.cin {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut col[row * ho * wo..(row + 1) * ho * wo];
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[oy * wo + ox] = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        col
    }

    fn col2im<T: Scalar>(&self, col: &[T], h: usize, w: usize) -> Vec<T> {
        let (ho, wo) = (self.out_dim(h), self.out_dim(w));
        let k = self.kernel;
        let mut dx = vec![T::zero(); self.cin * h * w];
        for c in 0..self.cin {
            let plane = &mut dx[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &col[row * ho * wo..(row + 1) * ho * wo];
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += src[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    /// `x` is `[cin, h, w]`; returns `[cout, ho, wo]`.
    pub fn forward<T: Scalar>(&self, params: &ParamStore<T>, x: &[T], h: usize, w: usize) -> Vec<T> {
        let (ho, wo) = (self.out_dim(h), self.out_dim(w));
        let ckk = self.cin * self.kernel * self.kernel;
        let wt = params.values(&self.weight);
        let mut y = vec![T::zero(); self.cout * ho * wo];
        let owned;
        let col: &[T] = if self.is_pointwise() {
            x
        } else {
            owned = self.im2col(x, h, w);
            &owned
        };
        let n = ho * wo;
        T::gemm(self.cout, ckk, n, T::one(), wt, ckk as isize, 1, col, n as isize, 1, T::zero(), &mut y, n as isize, 1);
        y
    }

    /// Accumulates the weight gradient and returns `dx` when requested.
    pub fn backward<T: Scalar>(
        &self,
        sink: &mut GradSink<'_, T>,
        params: &ParamStore<T>,
        x: &[T],
        h: usize,
        w: usize,
        dy: &[T],
        need_dx: bool,
    ) -> Option<Vec<T>> {
        let (ho, wo) = (self.out_dim(h), self.out_dim(w));
        let n = ho * wo;
        let ckk = self.cin * self.kernel * self.kernel;
        let dw_slot = sink.slot(&self.weight);
        if dw_slot.is_none() && !need_dx {
            return None;
        }
        let owned;
        let col: &[T] = if self.is_pointwise() {
            x
        } else {
            owned = self.im2col(x, h, w);
            &owned
        };
        if let Some(dw) = dw_slot {
            // dW[cout, ckk] += dy[cout, n] * col^T[n, ckk]
            T::gemm(self.cout, n, ckk, T::one(), dy, n as isize, 1, col, 1, n as isize, T::one(), dw, ckk as isize, 1);
        }
        if !need_dx {
            return None;
        }
        let wt = params.values(&self.weight);
        let mut dcol = vec![T::zero(); ckk * n];
        // dcol[ckk, n] = W^T[ckk, cout] * dy[cout, n]
        T::gemm(ckk, self.cout, n, T::one(), wt, 1, ckk as isize, dy, n as isize, 1, T::zero(), &mut dcol, n as isize, 1);
        if self.is_pointwise() {
            Some(dcol)
        } else {
            Some(self.col2im(&dcol, h, w))
        }
    }
}

/// Per-sample group normalization with a learned per-channel gain and shift.
#[derive(Debug, Clone)]
pub struct GroupNorm {
    pub scale: String,
    pub shift: String,
    pub channels: usize,
    pub groups: usize,
}

pub const GN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

impl GroupNorm {
    /// Groups of `group_size` channels; channel counts below the group size form one group.
    pub fn new(prefix: &str, channels: usize, group_size: usize) -> Self {
        let size = group_size.min(channels).max(1);
        assert!(channels % size == 0, "{channels} channels not divisible into groups of {size}");
        Self {
            scale: format!("{prefix}.scale"),
            shift: format!("{prefix}.shift"),
            channels,
            groups: channels / size,
        }
    }

    pub fn forward<T: Scalar>(&self, params: &ParamStore<T>, x: &[T], hw: usize) -> (Vec<T>, GnCache<T>) {
        let gamma = params.values(&self.scale);
        let beta = params.values(&self.shift);
        let per = self.channels / self.groups;
        let len = per * hw;
        let eps = T::from_f64(GN_EPS);
        let mut xhat = vec![T::zero(); x.len()];
        let mut y = vec![T::zero(); x.len()];
        let mut inv_std = Vec::with_capacity(self.groups);
        let inv_len = T::from_f64(1.0 / len as f64);
        for g in 0..self.groups {
            let span = g * len..(g + 1) * len;
            let xs = &x[span.clone()];
            let mean = xs.iter().copied().sum::<T>() * inv_len;
            let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_len;
            let istd = T::one() / (var + eps).sqrt();
            inv_std.push(istd);
            for c in 0..per {
                let ch = g * per + c;
                let off = span.start + c * hw;
                for i in off..off + hw {
                    let xh = (x[i] - mean) * istd;
                    xhat[i] = xh;
                    y[i] = gamma[ch] * xh + beta[ch];
                }
            }
        }
        (y, GnCache { xhat, inv_std })
    }

    pub fn backward<T: Scalar>(
        &self,
        sink: &mut GradSink<'_, T>,
        params: &ParamStore<T>,
        cache: &GnCache<T>,
        dy: &[T],
        hw: usize,
    ) -> Vec<T> {
        let gamma = params.values(&self.scale);
        if let Some(dgamma) = sink.slot(&self.scale) {
            for (c, dg) in dgamma.iter_mut().enumerate() {
                let s = c * hw..(c + 1) * hw;
                *dg += dy[s.clone()].iter().zip(&cache.xhat[s]).map(|(&a, &b)| a * b).sum::<T>();
            }
        }
        if let Some(dbeta) = sink.slot(&self.shift) {
            for (c, db) in dbeta.iter_mut().enumerate() {
                *db += dy[c * hw..(c + 1) * hw].iter().copied().sum::<T>();
            }
        }
        let per = self.channels / self.groups;
        let len = per * hw;
        let inv_len = T::from_f64(1.0 / len as f64);
        let mut dx = vec![T::zero(); dy.len()];
        for g in 0..self.groups {
            let base = g * len;
            let mut sum_d = T::zero();
            let mut sum_dx = T::zero();
            for c in 0..per {
                let gm = gamma[g * per + c];
                for i in base + c * hw..base + (c + 1) * hw {
                    let d = dy[i] * gm;
                    sum_d += d;
                    sum_dx += d * cache.xhat[i];
                }
            }
            let mean_d = sum_d * inv_len;
            let mean_dx = sum_dx * inv_len;
            let istd = cache.inv_std[g];
            for c in 0..per {
                let gm = gamma[g * per + c];
                for i in base + c * hw..base + (c + 1) * hw {
                    dx[i] = istd * (dy[i] * gm - mean_d - cache.xhat[i] * mean_dx);
                }
            }
        }
        dx
    }
}

pub fn relu_in_place<T: Scalar>(x: &mut [T]) {
    for v in x.iter_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zero the upstream gradient wherever the activation output was clipped.
pub fn relu_backward_in_place<T: Scalar>(out: &[T], dy: &mut [T]) {
    for (d, &o) in dy.iter_mut().zip(out) {
        if o <= T::zero() {
            *d = T::zero();
        }
    }
}

/// 3x3 stride-2 max pool with one pixel of padding.
#[derive(Debug, Clone)]
pub struct MaxPool;

impl MaxPool {
    pub fn out_dim(n: usize) -> usize {
        (n + 2 - 3) / 2 + 1
    }

    /// Returns the pooled map and the flat input index of each maximum.
    pub fn forward<T: Scalar>(x: &[T], channels: usize, h: usize, w: usize) -> (Vec<T>, Vec<usize>) {
        let (ho, wo) = (Self::out_dim(h), Self::out_dim(w));
        let mut y = Vec::with_capacity(channels * ho * wo);
        let mut arg = Vec::with_capacity(channels * ho * wo);
        for c in 0..channels {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = None::<(T, usize)>;
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let iy = (oy * 2 + ky) as isize - 1;
                            let ix = (ox * 2 + kx) as isize - 1;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            let i = c * h * w + iy as usize * w + ix as usize;
                            if best.is_none_or(|(b, _)| x[i] > b) {
                                best = Some((x[i], i));
                            }
                        }
                    }
                    let (v, i) = best.expect("window overlaps the input");
                    y.push(v);
                    arg.push(i);
                }
            }
        }
        (y, arg)
    }

    pub fn backward<T: Scalar>(arg: &[usize], dy: &[T], input_len: usize) -> Vec<T> {
        let mut dx = vec![T::zero(); input_len];
        for (&i, &d) in arg.iter().zip(dy) {
            dx[i] += d;
        }
        dx
    }
}

pub fn global_avg_pool<T: Scalar>(x: &[T], channels: usize, hw: usize) -> Vec<T> {
    let inv = T::from_f64(1.0 / hw as f64);
    (0..channels).map(|c| x[c * hw..(c + 1) * hw].iter().copied().sum::<T>() * inv).collect()
}

pub fn global_avg_pool_backward<T: Scalar>(dy: &[T], hw: usize) -> Vec<T> {
    let inv = T::from_f64(1.0 / hw as f64);
    dy.iter().flat_map(|&d| std::iter::repeat_n(d * inv, hw)).collect()
}

/// Fully connected layer over a batch: `y = x W^T + b`, with `W` shaped `[out, in]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: String,
    pub bias: String,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(prefix: &str, fan_in: usize, fan_out: usize) -> Self {
        Self { weight: format!("{prefix}.weight"), bias: format!("{prefix}.bias"), fan_in, fan_out }
    }

    pub fn forward<T: Scalar>(&self, params: &ParamStore<T>, x: &Matrix<T>) -> Matrix<T> {
        debug_assert_eq!(x.cols(), self.fan_in);
        let wt = params.values(&self.weight);
        let b = params.values(&self.bias);
        let mut y = Matrix::zeros(x.rows(), self.fan_out);
        for r in 0..x.rows() {
            y.row_mut(r).copy_from_slice(b);
        }
        let (m, k, n) = (x.rows(), self.fan_in, self.fan_out);
        T::gemm(m, k, n, T::one(), x.as_slice(), k as isize, 1, wt, 1, k as isize, T::one(), y.as_mut_slice(), n as isize, 1);
        y
    }

    pub fn backward<T: Scalar>(
        &self,
        sink: &mut GradSink<'_, T>,
        params: &ParamStore<T>,
        x: &Matrix<T>,
        dy: &Matrix<T>,
        need_dx: bool,
    ) -> Option<Matrix<T>> {
        let (m, k, n) = (x.rows(), self.fan_in, self.fan_out);
        if let Some(dw) = sink.slot(&self.weight) {
            // dW[n, k] += dy^T[n, m] * x[m, k]
            T::gemm(n, m, k, T::one(), dy.as_slice(), 1, n as isize, x.as_slice(), k as isize, 1, T::one(), dw, k as isize, 1);
        }
        if let Some(db) = sink.slot(&self.bias) {
            for row in dy.iter_rows() {
                for (g, &d) in db.iter_mut().zip(row) {
                    *g += d;
                }
            }
        }
        if !need_dx {
            return None;
        }
        let wt = params.values(&self.weight);
        let mut dx = Matrix::zeros(m, k);
        T::gemm(m, n, k, T::one(), dy.as_slice(), n as isize, 1, wt, k as isize, 1, T::zero(), dx.as_mut_slice(), k as isize, 1);
        Some(dx)
    }
}
