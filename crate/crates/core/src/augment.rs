//! Stochastic two-view augmentation: crop-resize, flip, color jitter, grayscale.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{quantize, Image};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JitterStrengths {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    /// Degrees.
    pub hue: f64,
}

impl Default for JitterStrengths {
    fn default() -> Self {
        Self { brightness: 0.8, contrast: 0.8, saturation: 0.8, hue: 36.0 }
    }
}

impl JitterStrengths {
    pub const NONE: JitterStrengths = JitterStrengths { brightness: 0.0, contrast: 0.0, saturation: 0.0, hue: 0.0 };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationPolicy {
    pub crop_scale_range: (f64, f64),
    pub flip_probability: f64,
    pub jitter_strengths: JitterStrengths,
    pub grayscale_probability: f64,
    pub output_size: usize,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self::standard(224)
    }
}

impl AugmentationPolicy {
    pub fn standard(output_size: usize) -> Self {
        Self {
            crop_scale_range: (0.2, 1.0),
            flip_probability: 0.5,
            jitter_strengths: JitterStrengths::default(),
            grayscale_probability: 0.2,
            output_size,
        }
    }

    /// Every transform disabled; only resizing remains.
    pub fn identity(output_size: usize) -> Self {
        Self {
            crop_scale_range: (1.0, 1.0),
            flip_probability: 0.0,
            jitter_strengths: JitterStrengths::NONE,
            grayscale_probability: 0.0,
            output_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.crop_scale_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(format!("crop scale range ({lo}, {hi}) must satisfy 0 < min <= max <= 1")));
        }
        for (name, p) in [("flip", self.flip_probability), ("grayscale", self.grayscale_probability)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} probability {p} outside [0, 1]")));
            }
        }
        let j = self.jitter_strengths;
        for (name, s) in [("brightness", j.brightness), ("contrast", j.contrast), ("saturation", j.saturation)] {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::Config(format!("{name} strength {s} outside [0, 1]")));
            }
        }
        if !(0.0..=180.0).contains(&j.hue) {
            return Err(Error::Config(format!("hue strength {} outside [0, 180] degrees", j.hue)));
        }
        if self.output_size == 0 {
            return Err(Error::Config("output size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewPair {
    pub view_a: Image,
    pub view_b: Image,
    pub source_index: usize,
}

/// Crop a random rectangle covering a fraction of the area drawn from
/// `scale_range` (aspect ratio in [3/4, 4/3]) and resize it bilinearly to
/// `output_size`². Falls back to the whole image when no candidate fits.
pub fn random_crop_resize<R: Rng + ?Sized>(img: &Image, scale_range: (f64, f64), output_size: usize, rng: &mut R) -> Image {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let area = w * h;
    let (log_lo, log_hi) = ((3.0f64 / 4.0).ln(), (4.0f64 / 3.0).ln());
    for _ in 0..10 {
        let target = area * rng.gen_range(scale_range.0..=scale_range.1);
        let ratio = rng.gen_range(log_lo..=log_hi).exp();
        let cw = (target * ratio).sqrt().round();
        let ch = (target / ratio).sqrt().round();
        if cw >= 1.0 && ch >= 1.0 && cw <= w && ch <= h {
            let x0 = rng.gen_range(0..=(w - cw) as usize) as f64;
            let y0 = rng.gen_range(0..=(h - ch) as usize) as f64;
            return img.resample_region(x0, y0, cw, ch, output_size, output_size);
        }
    }
    img.resize(output_size, output_size)
}

pub fn flip(img: &Image) -> Image {
    Image::from_fn(img.width(), img.height(), |x, y| img.pixel(img.width() - 1 - x, y))
}

/// Reverse the columns with the given probability.
pub fn horizontal_flip<R: Rng + ?Sized>(img: &Image, probability: f64, rng: &mut R) -> Image {
    if rng.gen_bool(probability.clamp(0.0, 1.0)) {
        flip(img)
    } else {
        img.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JitterOp {
    Brightness,
    Contrast,
    Saturation,
    Hue,
}

/// Concrete jitter parameters: multiplicative factors, hue shift in degrees,
/// and the application order.
#[derive(Debug, Clone, PartialEq)]
pub struct JitterDraw {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue_shift: f64,
    pub order: Vec<JitterOp>,
}

impl JitterDraw {
    pub fn sample<R: Rng + ?Sized>(s: &JitterStrengths, rng: &mut R) -> Self {
        let factor = |s: f64, rng: &mut R| if s > 0.0 { rng.gen_range((1.0 - s).max(0.0)..=1.0 + s) } else { 1.0 };
        let brightness = factor(s.brightness, rng);
        let contrast = factor(s.contrast, rng);
        let saturation = factor(s.saturation, rng);
        let hue_shift = if s.hue > 0.0 { rng.gen_range(-s.hue..=s.hue) } else { 0.0 };
        let mut order = vec![JitterOp::Brightness, JitterOp::Contrast, JitterOp::Saturation, JitterOp::Hue];
        order.shuffle(rng);
        Self { brightness, contrast, saturation, hue_shift, order }
    }
}

fn luma(p: [f64; 3]) -> f64 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

fn clamp255(v: f64) -> f64 {
    v.clamp(0.0, 255.0)
}

fn rgb_to_hsv(p: [f64; 3]) -> [f64; 3] {
    let [r, g, b] = p;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let hue = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let sat = if max == 0.0 { 0.0 } else { delta / max };
    [hue, sat, max]
}

fn hsv_to_rgb(hsv: [f64; 3]) -> [f64; 3] {
    let [h, s, v] = hsv;
    let c = v * s;
    let hp = h.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Hue of an RGB triple in degrees, 0 for grays.
pub fn hue_degrees(p: [u8; 3]) -> f64 {
    rgb_to_hsv([p[0] as f64, p[1] as f64, p[2] as f64])[0]
}

/// Convert an HSV triple (hue in degrees, saturation and value in [0, 1]) to 8-bit RGB.
pub fn hsv_to_rgb8(hue: f64, sat: f64, val: f64) -> [u8; 3] {
    let [r, g, b] = hsv_to_rgb([hue, sat.clamp(0.0, 1.0), val.clamp(0.0, 1.0) * 255.0]);
    [quantize(r), quantize(g), quantize(b)]
}

/// Apply concrete jitter parameters. Factors equal to 1 and a zero hue shift
/// are skipped, so a neutral draw is the identity.
pub fn apply_jitter(img: &Image, draw: &JitterDraw) -> Image {
    let mut px: Vec<[f64; 3]> = img.pixels().map(|p| [p[0] as f64, p[1] as f64, p[2] as f64]).collect();
    for op in &draw.order {
        match op {
            JitterOp::Brightness if draw.brightness != 1.0 => {
                for p in px.iter_mut() {
                    p.iter_mut().for_each(|c| *c = clamp255(*c * draw.brightness));
                }
            }
            JitterOp::Contrast if draw.contrast != 1.0 => {
                let mean = px.iter().map(|&p| luma(p)).sum::<f64>() / px.len().max(1) as f64;
                for p in px.iter_mut() {
                    p.iter_mut().for_each(|c| *c = clamp255((*c - mean) * draw.contrast + mean));
                }
            }
            JitterOp::Saturation if draw.saturation != 1.0 => {
                for p in px.iter_mut() {
                    let g = luma(*p);
                    p.iter_mut().for_each(|c| *c = clamp255((*c - g) * draw.saturation + g));
                }
            }
            JitterOp::Hue if draw.hue_shift != 0.0 => {
                for p in px.iter_mut() {
                    let mut hsv = rgb_to_hsv(*p);
                    hsv[0] += draw.hue_shift;
                    *p = hsv_to_rgb(hsv).map(clamp255);
                }
            }
            _ => {}
        }
    }
    let data = px.iter().flat_map(|p| p.map(quantize)).collect();
    Image::new(img.width(), img.height(), data).expect("same dimensions")
}

/// Random brightness, contrast, saturation, and hue perturbation in random order.
pub fn color_jitter<R: Rng + ?Sized>(img: &Image, strengths: &JitterStrengths, rng: &mut R) -> Image {
    apply_jitter(img, &JitterDraw::sample(strengths, rng))
}

pub fn grayscale(img: &Image) -> Image {
    Image::from_fn(img.width(), img.height(), |x, y| {
        let p = img.pixel(x, y);
        let l = quantize(luma([p[0] as f64, p[1] as f64, p[2] as f64]));
        [l, l, l]
    })
}

/// Replace each pixel by its luminance with the given probability.
pub fn to_grayscale<R: Rng + ?Sized>(img: &Image, probability: f64, rng: &mut R) -> Image {
    if rng.gen_bool(probability.clamp(0.0, 1.0)) {
        grayscale(img)
    } else {
        img.clone()
    }
}

/// One full pipeline draw: crop-resize, flip, jitter, grayscale.
pub fn augment<R: Rng + ?Sized>(img: &Image, policy: &AugmentationPolicy, rng: &mut R) -> Image {
    let x = random_crop_resize(img, policy.crop_scale_range, policy.output_size, rng);
    let x = horizontal_flip(&x, policy.flip_probability, rng);
    let x = color_jitter(&x, &policy.jitter_strengths, rng);
    to_grayscale(&x, policy.grayscale_probability, rng)
}

/// Two independent pipeline draws of the same image.
pub fn make_views<R: Rng + ?Sized>(img: &Image, policy: &AugmentationPolicy, source_index: usize, rng: &mut R) -> ViewPair {
    let view_a = augment(img, policy, rng);
    let view_b = augment(img, policy, rng);
    ViewPair { view_a, view_b, source_index }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;

    fn gradient(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, |x, y| [(x * 255 / w.max(1)) as u8, (y * 255 / h.max(1)) as u8, ((x + y) * 7 % 256) as u8])
    }

    #[test]
    fn identity_crop() {
        let img = gradient(16, 16);
        let out = random_crop_resize(&img, (1.0, 1.0), 16, &mut seeded(3));
        assert_eq!(out, img);
    }

    #[test]
    fn crop_output_shape_and_constant_fixed_point() {
        let img = Image::filled(4, 4, [7, 7, 7]);
        let mut rng = seeded(5);
        for _ in 0..50 {
            let out = random_crop_resize(&img, (0.2, 1.0), 9, &mut rng);
            assert_eq!((out.width(), out.height()), (9, 9));
            assert!(out.data().iter().all(|&v| v == 7));
        }
    }

    #[test]
    fn flip_examples() {
        let img = gradient(5, 3);
        assert_eq!(horizontal_flip(&img, 0.0, &mut seeded(1)), img);
        let twice = horizontal_flip(&horizontal_flip(&img, 1.0, &mut seeded(1)), 1.0, &mut seeded(2));
        assert_eq!(twice, img);
        let ab = Image::new(2, 1, vec![1, 2, 3, 4, 5, 6]).unwrap();
        assert_eq!(horizontal_flip(&ab, 1.0, &mut seeded(1)).data(), &[4, 5, 6, 1, 2, 3]);
    }

    #[test]
    fn neutral_jitter_is_identity() {
        let img = gradient(12, 7);
        assert_eq!(color_jitter(&img, &JitterStrengths::NONE, &mut seeded(9)), img);
    }

    #[test]
    fn forced_brightness_clamps() {
        let img = Image::filled(1, 1, [200, 200, 200]);
        let draw = JitterDraw { brightness: 2.0, contrast: 1.0, saturation: 1.0, hue_shift: 0.0, order: vec![JitterOp::Brightness] };
        assert_eq!(apply_jitter(&img, &draw).pixel(0, 0), [255, 255, 255]);
    }

    #[test]
    fn hsv_round_trip() {
        for p in [[255u8, 0, 0], [12, 200, 99], [0, 0, 0], [255, 255, 255], [30, 60, 90]] {
            let hsv = rgb_to_hsv(p.map(|v| v as f64));
            let back = hsv_to_rgb(hsv).map(quantize);
            assert_eq!(back, p);
        }
        assert!((hue_degrees([0, 255, 0]) - 120.0).abs() < 1e-9);
    }

    #[test]
    fn grayscale_examples() {
        let gray = Image::filled(1, 1, [100, 100, 100]);
        assert_eq!(to_grayscale(&gray, 1.0, &mut seeded(0)).pixel(0, 0), [100, 100, 100]);
        let red = Image::filled(1, 1, [255, 0, 0]);
        assert_eq!(to_grayscale(&red, 1.0, &mut seeded(0)).pixel(0, 0), [76, 76, 76]);
        let img = gradient(8, 8);
        let once = grayscale(&img);
        assert_eq!(grayscale(&once), once);
    }

    #[test]
    fn degenerate_policy_views_equal_resized_input() {
        let img = gradient(20, 20);
        let v = make_views(&img, &AugmentationPolicy::identity(10), 4, &mut seeded(1));
        let resized = img.resize(10, 10);
        assert_eq!(v.view_a, resized);
        assert_eq!(v.view_b, resized);
        assert_eq!(v.source_index, 4);
    }

    #[test]
    fn views_are_deterministic_and_usually_differ() {
        let img = gradient(32, 32);
        let p = AugmentationPolicy::standard(16);
        assert_eq!(make_views(&img, &p, 0, &mut seeded(8)), make_views(&img, &p, 0, &mut seeded(8)));
        let mut rng = seeded(8);
        assert!((0..100).any(|_| {
            let v = make_views(&img, &p, 0, &mut rng);
            v.view_a != v.view_b
        }));
    }

    #[test]
    fn policy_validation() {
        assert!(AugmentationPolicy::standard(32).validate().is_ok());
        let mut p = AugmentationPolicy::standard(32);
        p.crop_scale_range = (0.0, 1.0);
        assert!(p.validate().is_err());
        p = AugmentationPolicy::standard(0);
        assert!(p.validate().is_err());
    }

    proptest! {
        #[test]
        fn jitter_keeps_dimensions(seed in any::<u64>(), w in 1usize..9, h in 1usize..9) {
            let img = gradient(w, h);
            let out = color_jitter(&img, &JitterStrengths::default(), &mut seeded(seed));
            prop_assert_eq!((out.width(), out.height(), out.data().len()), (w, h, w * h * 3));
        }

        #[test]
        fn pipeline_fixes_output_size(seed in any::<u64>(), w in 2usize..40, h in 2usize..40) {
            let img = gradient(w, h);
            let out = augment(&img, &AugmentationPolicy::standard(12), &mut seeded(seed));
            prop_assert_eq!((out.width(), out.height()), (12, 12));
        }
    }
}
