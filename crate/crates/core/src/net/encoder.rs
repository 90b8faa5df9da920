//! Residual CNN encoders.
//!
//! Two profiles share one implementation: `compact`, a small basic-block
//! network that trains on a CPU, and `reference`, a bottleneck network with
//! the 3-4-6-3 stage layout emitting 2048-dim features.

use serde::{Deserialize, Serialize};

use super::layers::{
    global_avg_pool, global_avg_pool_backward, relu_backward_in_place, relu_in_place, Conv, GnCache, GradSink,
    GroupNorm, Linear, MaxPool,
};
use super::{FeatureBatch, Grads, Matrix, ParamRole, ParamStore, Scalar};
use crate::error::{Error, Result};
use crate::par;
use crate::raster::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderProfile {
    Reference,
    Compact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub profile: EncoderProfile,
    pub input_size: usize,
    pub feature_dim: usize,
    /// Output channels of each stage (bottleneck outputs for `reference`).
    pub stage_widths: Vec<usize>,
    pub blocks_per_stage: Vec<usize>,
    /// Channels per normalization group.
    #[serde(default = "default_group_size")]
    pub group_size: usize,
}

fn default_group_size() -> usize {
    8
}

impl EncoderConfig {
    pub fn compact(input_size: usize, feature_dim: usize) -> Self {
        Self {
            profile: EncoderProfile::Compact,
            input_size,
            feature_dim,
            stage_widths: vec![16, 32, 64],
            blocks_per_stage: vec![1, 1, 1],
            group_size: 8,
        }
    }

    pub fn reference(input_size: usize) -> Self {
        Self {
            profile: EncoderProfile::Reference,
            input_size,
            feature_dim: 2048,
            stage_widths: vec![256, 512, 1024, 2048],
            blocks_per_stage: vec![3, 4, 6, 3],
            group_size: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.feature_dim == 0 {
            return bad("encoder feature_dim must be positive".into());
        }
        if self.input_size < 4 {
            return bad(format!("encoder input_size {} too small", self.input_size));
        }
        if self.stage_widths.is_empty() || self.stage_widths.len() != self.blocks_per_stage.len() {
            return bad("stage_widths and blocks_per_stage must be non-empty and equally long".into());
        }
        if self.blocks_per_stage.contains(&0) {
            return bad("every stage needs at least one block".into());
        }
        let mut widths = self.stage_widths.clone();
        widths.push(self.stem_width());
        if self.profile == EncoderProfile::Reference {
            widths.extend(self.stage_widths.iter().map(|w| w / 4));
        }
        for w in widths {
            let g = self.group_size.min(w).max(1);
            if w == 0 || w % g != 0 {
                return bad(format!("width {w} is not divisible into groups of {}", self.group_size));
            }
        }
        Ok(())
    }

    fn stem_width(&self) -> usize {
        match self.profile {
            EncoderProfile::Compact => self.stage_widths[0],
            EncoderProfile::Reference => 64,
        }
    }
}

/// conv -> group norm -> optional ReLU
#[derive(Debug, Clone)]
struct Unit {
    conv: Conv,
    gn: GroupNorm,
    relu: bool,
}

#[derive(Debug, Clone)]
struct UnitCache<T> {
    x: Vec<T>,
    h: usize,
    w: usize,
    gn: GnCache<T>,
    out: Vec<T>,
}

impl Unit {
    #[allow(clippy::too_many_arguments)]
    fn new(prefix: &str, cin: usize, cout: usize, kernel: usize, stride: usize, group: usize, relu: bool) -> Self {
        Self {
            conv: Conv {
                weight: format!("{prefix}.conv.weight"),
                cin,
                cout,
                kernel,
                stride,
                pad: kernel / 2,
            },
            gn: GroupNorm::new(&format!("{prefix}.gn"), cout, group),
            relu,
        }
    }

    fn forward<T: Scalar>(&self, p: &ParamStore<T>, x: Vec<T>, h: usize, w: usize) -> (Vec<T>, UnitCache<T>) {
        let z = self.conv.forward(p, &x, h, w);
        let hw = self.conv.out_dim(h) * self.conv.out_dim(w);
        let (mut y, gn) = self.gn.forward(p, &z, hw);
        if self.relu {
            relu_in_place(&mut y);
        }
        (y.clone(), UnitCache { x, h, w, gn, out: y })
    }

    fn backward<T: Scalar>(
        &self,
        sink: &mut GradSink<'_, T>,
        p: &ParamStore<T>,
        c: &UnitCache<T>,
        mut dy: Vec<T>,
        need_dx: bool,
    ) -> Option<Vec<T>> {
        if self.relu {
            relu_backward_in_place(&c.out, &mut dy);
        }
        let hw = self.conv.out_dim(c.h) * self.conv.out_dim(c.w);
        let dz = self.gn.backward(sink, p, &c.gn, &dy, hw);
        self.conv.backward(sink, p, &c.x, c.h, c.w, &dz, need_dx)
    }

    fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (self.conv.out_dim(h), self.conv.out_dim(w))
    }
}

#[derive(Debug, Clone)]
struct Block {
    main: Vec<Unit>,
    shortcut: Option<Unit>,
}

#[derive(Debug, Clone)]
struct BlockCache<T> {
    main: Vec<UnitCache<T>>,
    shortcut: Option<UnitCache<T>>,
    out: Vec<T>,
}

impl Block {
    fn basic(prefix: &str, cin: usize, cout: usize, stride: usize, g: usize) -> Self {
        let main = vec![
            Unit::new(&format!("{prefix}.c0"), cin, cout, 3, stride, g, true),
            Unit::new(&format!("{prefix}.c1"), cout, cout, 3, 1, g, false),
        ];
        let shortcut =
            (stride != 1 || cin != cout).then(|| Unit::new(&format!("{prefix}.down"), cin, cout, 1, stride, g, false));
        Self { main, shortcut }
    }

    fn bottleneck(prefix: &str, cin: usize, cout: usize, stride: usize, g: usize) -> Self {
        let mid = cout / 4;
        let main = vec![
            Unit::new(&format!("{prefix}.c0"), cin, mid, 1, 1, g, true),
            Unit::new(&format!("{prefix}.c1"), mid, mid, 3, stride, g, true),
            Unit::new(&format!("{prefix}.c2"), mid, cout, 1, 1, g, false),
        ];
        let shortcut =
            (stride != 1 || cin != cout).then(|| Unit::new(&format!("{prefix}.down"), cin, cout, 1, stride, g, false));
        Self { main, shortcut }
    }

    fn forward<T: Scalar>(&self, p: &ParamStore<T>, x: Vec<T>, h: usize, w: usize) -> (Vec<T>, BlockCache<T>, usize, usize) {
        let (mut ch, mut cw) = (h, w);
        let mut caches = Vec::with_capacity(self.main.len());
        let mut cur = x.clone();
        for u in &self.main {
            let (y, c) = u.forward(p, cur, ch, cw);
            (ch, cw) = u.out_hw(ch, cw);
            caches.push(c);
            cur = y;
        }
        let (short, sc) = match &self.shortcut {
            Some(u) => {
                let (y, c) = u.forward(p, x, h, w);
                (y, Some(c))
            }
            None => (x, None),
        };
        for (a, b) in cur.iter_mut().zip(&short) {
            *a += *b;
        }
        relu_in_place(&mut cur);
        (cur.clone(), BlockCache { main: caches, shortcut: sc, out: cur }, ch, cw)
    }

    fn backward<T: Scalar>(
        &self,
        sink: &mut GradSink<'_, T>,
        p: &ParamStore<T>,
        c: &BlockCache<T>,
        mut dy: Vec<T>,
        need_dx: bool,
    ) -> Option<Vec<T>> {
        relu_backward_in_place(&c.out, &mut dy);
        let mut d = Some(dy.clone());
        for (i, (u, uc)) in self.main.iter().zip(&c.main).enumerate().rev() {
            let upstream = d.take().expect("gradient flows to every non-first unit");
            d = u.backward(sink, p, uc, upstream, need_dx || i > 0);
        }
        let dshort = match (&self.shortcut, &c.shortcut) {
            (Some(u), Some(uc)) => u.backward(sink, p, uc, dy, need_dx),
            _ => need_dx.then_some(dy),
        };
        if !need_dx {
            return None;
        }
        let mut dx = d.expect("dx requested");
        for (a, b) in dx.iter_mut().zip(dshort.expect("shortcut gradient requested")) {
            *a += b;
        }
        Some(dx)
    }
}

/// Per-sample forward state needed by the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderCache<T> {
    stem: UnitCache<T>,
    pool: Option<(Vec<usize>, usize)>,
    blocks: Vec<BlockCache<T>>,
    pooled: Vec<T>,
    last_hw: usize,
    last_len: usize,
}

/// A parameter the encoder or a head expects in the store.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub role: ParamRole,
    pub fan_in: usize,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    config: EncoderConfig,
    stem: Unit,
    maxpool: bool,
    blocks: Vec<Block>,
    fc: Option<Linear>,
}

impl Encoder {
    pub fn new(config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        let g = config.group_size;
        let (stem, maxpool) = match config.profile {
            EncoderProfile::Compact => (Unit::new("enc.stem", 3, config.stem_width(), 3, 1, g, true), false),
            EncoderProfile::Reference => (Unit::new("enc.stem", 3, config.stem_width(), 7, 2, g, true), true),
        };
        let mut blocks = Vec::new();
        let mut cin = config.stem_width();
        for (s, (&width, &count)) in config.stage_widths.iter().zip(&config.blocks_per_stage).enumerate() {
            for b in 0..count {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                let prefix = format!("enc.s{s}.b{b}");
                blocks.push(match config.profile {
                    EncoderProfile::Compact => Block::basic(&prefix, cin, width, stride, g),
                    EncoderProfile::Reference => Block::bottleneck(&prefix, cin, width, stride, g),
                });
                cin = width;
            }
        }
        let fc = (cin != config.feature_dim).then(|| Linear::new("enc.fc", cin, config.feature_dim));
        Ok(Self { config: config.clone(), stem, maxpool, blocks, fc })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim
    }

    pub fn input_size(&self) -> usize {
        self.config.input_size
    }

    /// Every parameter in creation order.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut out = Vec::new();
        let mut unit = |u: &Unit| {
            let c = &u.conv;
            out.push(ParamSpec {
                name: c.weight.clone(),
                shape: c.weight_shape(),
                role: ParamRole::Weight,
                fan_in: c.cin * c.kernel * c.kernel,
            });
            out.push(ParamSpec { name: u.gn.scale.clone(), shape: vec![u.gn.channels], role: ParamRole::Scale, fan_in: 1 });
            out.push(ParamSpec { name: u.gn.shift.clone(), shape: vec![u.gn.channels], role: ParamRole::Bias, fan_in: 1 });
        };
        unit(&self.stem);
        for b in &self.blocks {
            for u in &b.main {
                unit(u);
            }
            if let Some(u) = &b.shortcut {
                unit(u);
            }
        }
        if let Some(fc) = &self.fc {
            out.extend(linear_specs(fc));
        }
        out
    }

    /// Forward one `[3, s, s]` input.
    pub fn forward_sample<T: Scalar>(&self, p: &ParamStore<T>, x: Vec<T>) -> (Vec<T>, EncoderCache<T>) {
        let s = self.config.input_size;
        let (mut cur, stem) = self.stem.forward(p, x, s, s);
        let (mut h, mut w) = self.stem.out_hw(s, s);
        let pool = if self.maxpool {
            let len = cur.len();
            let (y, arg) = MaxPool::forward(&cur, self.config.stem_width(), h, w);
            (h, w) = (MaxPool::out_dim(h), MaxPool::out_dim(w));
            cur = y;
            Some((arg, len))
        } else {
            None
        };
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (y, c, nh, nw) = b.forward(p, cur, h, w);
            (h, w) = (nh, nw);
            blocks.push(c);
            cur = y;
        }
        let channels = cur.len() / (h * w);
        let pooled = global_avg_pool(&cur, channels, h * w);
        let features = match &self.fc {
            Some(fc) => fc.forward(p, &Matrix::from_vec(1, pooled.len(), pooled.clone())).into_vec(),
            None => pooled.clone(),
        };
        let cache = EncoderCache { stem, pool, blocks, pooled, last_hw: h * w, last_len: cur.len() };
        (features, cache)
    }

    /// Accumulate parameter gradients for one sample given `d loss / d features`.
    pub fn backward_sample<T: Scalar>(&self, sink: &mut GradSink<'_, T>, p: &ParamStore<T>, c: &EncoderCache<T>, dfeat: &[T]) {
        let dpooled = match &self.fc {
            Some(fc) => {
                let x = Matrix::from_vec(1, c.pooled.len(), c.pooled.clone());
                let dy = Matrix::from_vec(1, dfeat.len(), dfeat.to_vec());
                fc.backward(sink, p, &x, &dy, true).expect("dx requested").into_vec()
            }
            None => dfeat.to_vec(),
        };
        let mut d = global_avg_pool_backward(&dpooled, c.last_hw);
        debug_assert_eq!(d.len(), c.last_len);
        for (b, bc) in self.blocks.iter().zip(&c.blocks).rev() {
            d = b.backward(sink, p, bc, d, true).expect("dx requested");
        }
        if let Some((arg, len)) = &c.pool {
            d = MaxPool::backward(arg, &d, *len);
        }
        self.stem.backward(sink, p, &c.stem, d, false);
    }

    /// Forward a batch of prepared inputs, keeping caches for backward.
    pub fn forward_batch<T: Scalar>(&self, p: &ParamStore<T>, inputs: &[Vec<T>]) -> (FeatureBatch<T>, Vec<EncoderCache<T>>) {
        let outs = par::map(inputs, |_, x| self.forward_sample(p, x.clone()));
        let mut feats = Matrix::zeros(inputs.len(), self.feature_dim());
        let mut caches = Vec::with_capacity(outs.len());
        for (i, (f, c)) in outs.into_iter().enumerate() {
            feats.row_mut(i).copy_from_slice(&f);
            caches.push(c);
        }
        (feats, caches)
    }

    /// Forward without keeping caches.
    pub fn features<T: Scalar>(&self, p: &ParamStore<T>, inputs: &[Vec<T>]) -> FeatureBatch<T> {
        let outs = par::map(inputs, |_, x| self.forward_sample(p, x.clone()).0);
        Matrix::from_rows(&outs)
    }

    /// Sum per-sample parameter gradients (in sample order) into `grads`.
    pub fn backward_batch<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        caches: &[EncoderCache<T>],
        dfeat: &FeatureBatch<T>,
        grads: &mut Grads<T>,
    ) {
        // bounded memory: at most one gradient buffer per worker is alive
        let width = par::threads().max(1);
        for (k, chunk) in caches.chunks(width).enumerate() {
            let per_sample = par::map(chunk, |i, c| {
                let mut g = Grads::zeros_like(p);
                let mut sink = GradSink::new(p, &mut g);
                self.backward_sample(&mut sink, p, c, dfeat.row(k * width + i));
                g
            });
            for g in &per_sample {
                grads.add_assign(g);
            }
        }
    }

    /// Convert an image into the network's input layout, resizing when needed.
    pub fn prepare<T: Scalar>(&self, img: &Image) -> Vec<T> {
        let s = self.config.input_size;
        if img.width() == s && img.height() == s {
            img.to_chw()
        } else {
            img.resize(s, s).to_chw()
        }
    }
}

pub(crate) fn linear_specs(l: &Linear) -> Vec<ParamSpec> {
    vec![
        ParamSpec { name: l.weight.clone(), shape: vec![l.fan_out, l.fan_in], role: ParamRole::Weight, fan_in: l.fan_in },
        ParamSpec { name: l.bias.clone(), shape: vec![l.fan_out], role: ParamRole::Bias, fan_in: l.fan_in },
    ]
}

/// Encode a batch of images; every image must already be `input_size` square.
pub fn encode<T: Scalar>(encoder: &Encoder, params: &ParamStore<T>, batch: &[Image]) -> Result<FeatureBatch<T>> {
    let s = encoder.input_size();
    if let Some(bad) = batch.iter().find(|i| i.width() != s || i.height() != s) {
        return Err(Error::ShapeMismatch(format!(
            "image {}x{} but encoder expects {s}x{s}",
            bad.width(),
            bad.height()
        )));
    }
    let inputs: Vec<Vec<T>> = batch.iter().map(|i| i.to_chw()).collect();
    Ok(encoder.features(params, &inputs))
}
