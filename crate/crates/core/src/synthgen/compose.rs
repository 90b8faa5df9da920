use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Cutout;
use crate::error::{Error, Result};
use crate::raster::{quantize, Image};

/// Attempts per instance before giving up under the no-overlap constraint.
pub const PLACEMENT_RETRIES: usize = 100;

/// Where one cutout instance landed. `width` and `height` are the rotated
/// bounding box, whose top-left corner is `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub cutout_index: usize,
    pub x: usize,
    pub y: usize,
    pub rotation: f64,
    pub width: usize,
    pub height: usize,
}

impl Placement {
    fn overlaps(&self, other: &Placement) -> bool {
        self.x < other.x + other.width
            && other.x < self.x + self.width
            && self.y < other.y + other.height
            && other.y < self.y + self.height
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Background {
    Solid([u8; 3]),
    Image(Image),
}

impl Background {
    pub fn render(&self, width: usize, height: usize) -> Image {
        match self {
            Background::Solid(c) => Image::filled(width, height, *c),
            Background::Image(img) => img.resize(width, height),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComposeOptions {
    pub rotate: bool,
    pub no_overlap: bool,
}

impl Default for ComposeOptions {
    fn default() -> Self {
        Self { rotate: true, no_overlap: false }
    }
}

fn rotated_box(w: usize, h: usize, degrees: f64) -> (usize, usize) {
    let (s, c) = degrees.to_radians().sin_cos();
    let (w, h) = (w as f64, h as f64);
    let bw = (w * c.abs() + h * s.abs() - 1e-9).ceil().max(1.0);
    let bh = (w * s.abs() + h * c.abs() - 1e-9).ceil().max(1.0);
    (bw as usize, bh as usize)
}

/// Alpha-blend one rotated cutout into `canvas` at `p`.
fn blend(canvas: &mut Image, cutout: &Image, p: &Placement) {
    let (s, c) = p.rotation.to_radians().sin_cos();
    let (cx, cy) = (p.width as f64 / 2.0, p.height as f64 / 2.0);
    let (sx, sy) = (cutout.width() as f64 / 2.0, cutout.height() as f64 / 2.0);
    for by in 0..p.height {
        for bx in 0..p.width {
            // inverse rotation from the box pixel center into cutout pixel coordinates
            let dx = bx as f64 + 0.5 - cx;
            let dy = by as f64 + 0.5 - cy;
            let u = c * dx + s * dy + sx - 0.5;
            let v = -s * dx + c * dy + sy - 0.5;
            let a = cutout.sample_alpha(u, v) / 255.0;
            if a <= 0.0 {
                continue;
            }
            let (x, y) = (p.x + bx, p.y + by);
            let rgb = cutout.sample_bilinear(u, v);
            let bg = canvas.pixel(x, y);
            let mix = |k: usize| quantize(a * rgb[k] + (1.0 - a) * bg[k] as f64);
            canvas.set_pixel(x, y, [mix(0), mix(1), mix(2)]);
        }
    }
}

/// Paint `count` instances drawn with replacement from `cutouts` onto the
/// background, each fully inside the canvas. Placements are in draw order.
pub fn compose_image<R: Rng + ?Sized>(
    cutouts: &[Cutout],
    count: usize,
    canvas: (usize, usize),
    background: &Background,
    options: ComposeOptions,
    rng: &mut R,
) -> Result<(Image, Vec<Placement>)> {
    let (cw, ch) = canvas;
    let mut img = background.render(cw, ch);
    if count == 0 {
        return Ok((img, Vec::new()));
    }
    if cutouts.is_empty() {
        return Err(Error::Config("no cutouts to compose".into()));
    }
    if let Some(c) = cutouts.iter().find(|c| c.class_label != cutouts[0].class_label) {
        return Err(Error::Config(format!("mixed classes `{}` and `{}` in one image", cutouts[0].class_label, c.class_label)));
    }
    if let Some(c) = cutouts.iter().find(|c| c.image.alpha().is_none()) {
        return Err(Error::Config(format!("cutout {} has no alpha mask", c.source_id)));
    }
    let mut placed: Vec<Placement> = Vec::with_capacity(count);
    for instance in 0..count {
        let mut attempt = 0;
        let p = loop {
            let cutout_index = rng.gen_range(0..cutouts.len());
            let rotation = if options.rotate { rng.gen_range(0.0..360.0) } else { 0.0 };
            let cut = &cutouts[cutout_index].image;
            let (bw, bh) = rotated_box(cut.width(), cut.height(), rotation);
            if bw > cw || bh > ch {
                return Err(Error::Config(format!(
                    "cutout {} ({}x{}) does not fit a {cw}x{ch} canvas",
                    cutouts[cutout_index].source_id,
                    cut.width(),
                    cut.height()
                )));
            }
            let x = rng.gen_range(0..=cw - bw);
            let y = rng.gen_range(0..=ch - bh);
            let p = Placement { cutout_index, x, y, rotation, width: bw, height: bh };
            if !options.no_overlap || placed.iter().all(|q| !q.overlaps(&p)) {
                break p;
            }
            attempt += 1;
            if attempt >= PLACEMENT_RETRIES {
                return Err(Error::PlacementFailure { instance, retries: PLACEMENT_RETRIES });
            }
        };
        blend(&mut img, &cutouts[p.cutout_index].image, &p);
        placed.push(p);
    }
    Ok((img, placed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn square(size: usize, rgb: [u8; 3]) -> Cutout {
        Cutout {
            image: Image::filled(size, size, rgb).with_alpha(vec![255; size * size]).unwrap(),
            class_label: "sq".into(),
            source_id: "sq-0".into(),
        }
    }

    #[test]
    fn zero_count_is_background() {
        let bg = Background::Solid([220, 220, 220]);
        let (img, p) = compose_image(&[square(3, [0, 0, 0])], 0, (16, 12), &bg, ComposeOptions::default(), &mut seeded(1)).unwrap();
        assert_eq!(img, Image::filled(16, 12, [220, 220, 220]));
        assert!(p.is_empty());
    }

    #[test]
    fn fifty_seeds_stay_in_bounds_and_are_deterministic() {
        let cut = [square(9, [10, 200, 30]), square(5, [40, 40, 40])];
        let bg = Background::Solid([220, 220, 220]);
        let run = || compose_image(&cut, 50, (224, 224), &bg, ComposeOptions::default(), &mut seeded(42)).unwrap();
        let (img, p) = run();
        assert_eq!(p.len(), 50);
        for q in &p {
            assert!(q.x + q.width <= 224 && q.y + q.height <= 224);
        }
        assert_eq!(run(), (img, p));
    }

    #[test]
    fn opaque_pixels_replace_and_transparent_pixels_keep() {
        let mut alpha = vec![255; 16];
        alpha[0] = 0;
        let cut = Cutout {
            image: Image::filled(4, 4, [1, 2, 3]).with_alpha(alpha).unwrap(),
            class_label: "c".into(),
            source_id: "c-0".into(),
        };
        let opts = ComposeOptions { rotate: false, no_overlap: false };
        let (img, p) = compose_image(&[cut], 1, (6, 6), &Background::Solid([200, 200, 200]), opts, &mut seeded(3)).unwrap();
        let p = p[0];
        assert_eq!(img.pixel(p.x, p.y), [200, 200, 200]);
        assert_eq!(img.pixel(p.x + 3, p.y + 3), [1, 2, 3]);
        assert_eq!(img.pixel(p.x + 1, p.y + 2), [1, 2, 3]);
    }

    #[test]
    fn impossible_no_overlap_fails() {
        let opts = ComposeOptions { rotate: false, no_overlap: true };
        let err = compose_image(&[square(6, [0, 0, 0])], 5, (10, 10), &Background::Solid([255; 3]), opts, &mut seeded(0)).unwrap_err();
        assert!(matches!(err, Error::PlacementFailure { retries: PLACEMENT_RETRIES, .. }));
    }

    #[test]
    fn rotated_boxes() {
        assert_eq!(rotated_box(10, 4, 0.0), (10, 4));
        assert_eq!(rotated_box(10, 4, 90.0), (4, 10));
        assert_eq!(rotated_box(10, 10, 45.0), (15, 15));
    }
}
