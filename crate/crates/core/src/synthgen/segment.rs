use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::Cutout;
use crate::error::{Error, Result};
use crate::raster::{quantize, Image};

/// Largest allowed foreground coverage before a photo is rejected.
pub const MAX_COVERAGE: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub enum ThresholdConfig {
    /// Otsu's between-class-variance threshold on luminance.
    #[default]
    Otsu,
    /// Pixels with luminance at or below the value are foreground.
    Fixed(u8),
}

fn luminance(p: [u8; 3]) -> u8 {
    quantize(0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
}

/// Threshold maximizing between-class variance of the split `<= t` / `> t`,
/// or `None` when every pixel has the same luminance.
pub fn otsu_threshold(hist: &[u64; 256]) -> Option<u8> {
    let total: u64 = hist.iter().sum();
    let sum_all: f64 = hist.iter().enumerate().map(|(v, &c)| v as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0u64, 0.0f64);
    let mut best: Option<(f64, u8)> = None;
    for t in 0..255usize {
        w0 += hist[t];
        sum0 += t as f64 * hist[t] as f64;
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let m0 = sum0 / w0 as f64;
        let m1 = (sum_all - sum0) / w1 as f64;
        let var = w0 as f64 * w1 as f64 * (m0 - m1) * (m0 - m1);
        if best.map_or(true, |(b, _)| var > b) {
            best = Some((var, t as u8));
        }
    }
    best.map(|(_, t)| t)
}

/// Segment the single dark object on a bright background: threshold the
/// luminance, keep the largest 4-connected component, and crop to its
/// bounding box with alpha 255 inside and 0 outside.
pub fn extract_cutout(photo: &Image, config: ThresholdConfig) -> Result<Image> {
    let (w, h) = (photo.width(), photo.height());
    if w == 0 || h == 0 {
        return Err(Error::NoForegroundFound);
    }
    let lum: Vec<u8> = photo.pixels().map(luminance).collect();
    let threshold = match config {
        ThresholdConfig::Fixed(t) => t,
        ThresholdConfig::Otsu => {
            let mut hist = [0u64; 256];
            lum.iter().for_each(|&l| hist[l as usize] += 1);
            otsu_threshold(&hist).ok_or(Error::NoForegroundFound)?
        }
    };
    let fg: Vec<bool> = lum.iter().map(|&l| l <= threshold).collect();

    let mut label = vec![0u32; w * h];
    let mut best: Option<(u32, usize)> = None;
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !fg[start] || label[start] != 0 {
            continue;
        }
        next += 1;
        label[start] = next;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if fg[j] && label[j] == 0 {
                    label[j] = next;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        if best.map_or(true, |(_, s)| size > s) {
            best = Some((next, size));
        }
    }
    let (id, size) = best.ok_or(Error::NoForegroundFound)?;
    let coverage = size as f64 / (w * h) as f64;
    if coverage > MAX_COVERAGE {
        return Err(Error::AmbiguousForeground { coverage });
    }

    let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0, 0);
    for (i, _) in label.iter().enumerate().filter(|&(_, &l)| l == id) {
        let (x, y) = (i % w, i / w);
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    let (cw, ch) = (x1 - x0 + 1, y1 - y0 + 1);
    let rgb = Image::from_fn(cw, ch, |x, y| photo.pixel(x0 + x, y0 + y));
    let alpha = (0..ch)
        .flat_map(|y| (0..cw).map(move |x| (x, y)))
        .map(|(x, y)| if label[(y0 + y) * w + x0 + x] == id { 255 } else { 0 })
        .collect();
    rgb.with_alpha(alpha)
}

/// One cutout per photo, all labelled `class_label`.
pub fn extract_cutouts(photos: &[Image], class_label: &str, config: ThresholdConfig) -> Result<Vec<Cutout>> {
    photos
        .iter()
        .enumerate()
        .map(|(i, p)| {
            Ok(Cutout {
                image: extract_cutout(p, config)?,
                class_label: class_label.to_string(),
                source_id: format!("{class_label}-{i}"),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn white(w: usize, h: usize) -> Image {
        Image::filled(w, h, [255, 255, 255])
    }

    #[test]
    fn uniform_white_has_no_foreground() {
        assert!(matches!(extract_cutout(&white(16, 16), ThresholdConfig::Otsu), Err(Error::NoForegroundFound)));
    }

    #[test]
    fn centered_square_yields_64_opaque_pixels() {
        let photo = Image::from_fn(32, 32, |x, y| if (12..20).contains(&x) && (12..20).contains(&y) { [0, 0, 0] } else { [255, 255, 255] });
        let c = extract_cutout(&photo, ThresholdConfig::Otsu).unwrap();
        let opaque = c.alpha().unwrap().iter().filter(|&&a| a == 255).count();
        assert_eq!(opaque, 64);
        assert_eq!((c.width(), c.height()), (8, 8));
    }

    #[test]
    fn keeps_only_the_largest_component() {
        // 10x10 blob (100 px) and 4x5 blob (20 px)
        let photo = Image::from_fn(40, 30, |x, y| {
            let big = (2..12).contains(&x) && (3..13).contains(&y);
            let small = (30..34).contains(&x) && (20..25).contains(&y);
            if big || small { [20, 20, 20] } else { [250, 250, 250] }
        });
        let c = extract_cutout(&photo, ThresholdConfig::Otsu).unwrap();
        let opaque = c.alpha().unwrap().iter().filter(|&&a| a > 0).count();
        assert_eq!(opaque, 100);
        // brute-force oracle: count dark pixels inside the big blob's box
        let brute = (3..13).flat_map(|y| (2..12).map(move |x| (x, y))).filter(|&(x, y)| photo.pixel(x, y)[0] < 128).count();
        assert_eq!(opaque, brute);
    }

    #[test]
    fn nearly_full_coverage_is_ambiguous() {
        let photo = Image::from_fn(10, 10, |x, y| if x == 0 && y == 0 { [255, 255, 255] } else { [0, 0, 0] });
        assert!(matches!(extract_cutout(&photo, ThresholdConfig::Otsu), Err(Error::AmbiguousForeground { .. })));
    }
}
