use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Cutout;
use crate::augment::hsv_to_rgb8;
use crate::error::{Error, Result};
use crate::raster::Image;

/// Procedural seed appearance. Classes differ in base hue (evenly spaced
/// around the color wheel), eccentricity, and speckle density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    /// Major axis length in pixels.
    pub seed_length: f64,
    pub saturation: f64,
    pub value: f64,
    /// Degrees added to every class's base hue.
    pub hue_offset: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self { seed_length: 22.0, saturation: 0.65, value: 0.7, hue_offset: 0.0 }
    }
}

impl ToyConfig {
    /// Seed length scaled to a canvas: a tenth of its side, at least 6 px.
    pub fn for_canvas(size: usize) -> Self {
        Self { seed_length: (size as f64 / 10.0).max(6.0), ..Self::default() }
    }
}

pub const MAX_TOY_CLASSES: usize = 9;

/// Minor/major axis ratio of class `c` of `k`: near-circular to oblong.
fn axis_ratio(c: usize, k: usize) -> f64 {
    0.95 - 0.5 * c as f64 / (k - 1) as f64
}

fn speckle_density(c: usize, k: usize) -> f64 {
    0.3 * (k - 1 - c) as f64 / (k - 1) as f64
}

pub fn class_hue(c: usize, k: usize, config: &ToyConfig) -> f64 {
    (config.hue_offset + 360.0 * c as f64 / k as f64).rem_euclid(360.0)
}

fn render<R: Rng + ?Sized>(major: f64, minor: f64, hue: f64, speckle: f64, config: &ToyConfig, rng: &mut R) -> Image {
    let (a, b) = (major / 2.0, minor / 2.0);
    let w = (2.0 * a).ceil() as usize + 2;
    let h = (2.0 * b).ceil() as usize + 2;
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    const SS: usize = 4;
    let mut data = Vec::with_capacity(w * h * 3);
    let mut alpha = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let mut inside = 0;
            for sy in 0..SS {
                for sx in 0..SS {
                    let px = x as f64 + (sx as f64 + 0.5) / SS as f64 - cx;
                    let py = y as f64 + (sy as f64 + 0.5) / SS as f64 - cy;
                    if (px / a).powi(2) + (py / b).powi(2) <= 1.0 {
                        inside += 1;
                    }
                }
            }
            let px = x as f64 + 0.5 - cx;
            let py = y as f64 + 0.5 - cy;
            let r2 = ((px / a).powi(2) + (py / b).powi(2)).min(1.0);
            let mut val = config.value * (1.0 - 0.3 * r2);
            if rng.gen_bool(speckle) {
                val *= 0.45;
            }
            data.extend_from_slice(&hsv_to_rgb8(hue, config.saturation, val));
            alpha.push((255 * inside / (SS * SS)) as u8);
        }
    }
    Image::new(w, h, data).and_then(|i| i.with_alpha(alpha)).expect("consistent buffer sizes")
}

/// `class_count × per_class` ellipse cutouts labelled `toy_0`, `toy_1`, ...
/// Instances jitter axis lengths by up to 15% and hue by up to 10 degrees.
pub fn generate_toy_cutouts<R: Rng + ?Sized>(
    class_count: usize,
    per_class: usize,
    config: &ToyConfig,
    rng: &mut R,
) -> Result<Vec<Cutout>> {
    if !(2..=MAX_TOY_CLASSES).contains(&class_count) {
        return Err(Error::Config(format!("toy class count must be in 2..={MAX_TOY_CLASSES}, got {class_count}")));
    }
    if per_class == 0 {
        return Err(Error::Config("toy per-class count must be positive".into()));
    }
    if config.seed_length < 3.0 {
        return Err(Error::Config(format!("toy seed length {} below 3 px", config.seed_length)));
    }
    let mut out = Vec::with_capacity(class_count * per_class);
    for c in 0..class_count {
        let label = format!("toy_{c}");
        for i in 0..per_class {
            let major = config.seed_length * rng.gen_range(0.85..=1.15);
            let minor = config.seed_length * axis_ratio(c, class_count) * rng.gen_range(0.85..=1.15);
            let hue = class_hue(c, class_count, config) + rng.gen_range(-10.0..=10.0);
            let image = render(major, minor.min(major), hue, speckle_density(c, class_count), config, rng);
            out.push(Cutout { image, class_label: label.clone(), source_id: format!("{label}-{i}") });
        }
    }
    Ok(out)
}
