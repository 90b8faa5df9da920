//! Owned 8-bit RGB pixel buffers with an optional alpha mask.

use std::path::Path;

use crate::error::{Error, Result};

/// Row-major RGB image, 8 bits per channel, with an optional per-pixel alpha.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<u8>,
    alpha: Option<Vec<u8>>,
}

/// Round half-up and clamp into the 8-bit range.
#[inline]
pub fn quantize(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::ShapeMismatch(format!(
                "{} bytes for a {width}x{height}x3 image",
                data.len()
            )));
        }
        Ok(Self { width, height, data, alpha: None })
    }

    pub fn with_alpha(mut self, alpha: Vec<u8>) -> Result<Self> {
        if alpha.len() != self.width * self.height {
            return Err(Error::ShapeMismatch(format!(
                "{} alpha values for a {}x{} image",
                alpha.len(),
                self.width,
                self.height
            )));
        }
        self.alpha = Some(alpha);
        Ok(self)
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self { width, height, data, alpha: None }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self { width, height, data, alpha: None }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_empty(&self) -> bool {
        self.width == 0 || self.height == 0
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn alpha(&self) -> Option<&[u8]> {
        self.alpha.as_deref()
    }

    pub fn strip_alpha(mut self) -> Self {
        self.alpha = None;
        self
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    #[inline]
    pub fn alpha_at(&self, x: usize, y: usize) -> u8 {
        self.alpha.as_ref().map_or(255, |a| a[y * self.width + x])
    }

    pub fn pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }

    /// Bilinear resample of the sub-rectangle `(x0, y0, w, h)` (in source
    /// pixel units, possibly fractional) onto an `out_w x out_h` grid.
    /// Pixel centers are mapped half-pixel aligned, so a full-frame resample
    /// to the same size is the identity.
    pub fn resample_region(&self, x0: f64, y0: f64, w: f64, h: f64, out_w: usize, out_h: usize) -> Image {
        let sx = w / out_w as f64;
        let sy = h / out_h as f64;
        let mut out = Vec::with_capacity(out_w * out_h * 3);
        for oy in 0..out_h {
            let fy = y0 + (oy as f64 + 0.5) * sy - 0.5;
            for ox in 0..out_w {
                let fx = x0 + (ox as f64 + 0.5) * sx - 0.5;
                let rgb = self.sample_bilinear(fx, fy);
                out.extend(rgb.iter().map(|&v| quantize(v)));
            }
        }
        Image { width: out_w, height: out_h, data: out, alpha: None }
    }

    pub fn resize(&self, out_w: usize, out_h: usize) -> Image {
        if out_w == self.width && out_h == self.height {
            return self.clone().strip_alpha();
        }
        self.resample_region(0.0, 0.0, self.width as f64, self.height as f64, out_w, out_h)
    }

    /// Bilinear sample with edge clamping, returning floating-point channels.
    pub fn sample_bilinear(&self, fx: f64, fy: f64) -> [f64; 3] {
        let (x0, x1, tx) = bilinear_taps(fx, self.width);
        let (y0, y1, ty) = bilinear_taps(fy, self.height);
        let mut rgb = [0.0; 3];
        for (c, v) in rgb.iter_mut().enumerate() {
            let p = |x: usize, y: usize| self.data[(y * self.width + x) * 3 + c] as f64;
            let top = p(x0, y0) * (1.0 - tx) + p(x1, y0) * tx;
            let bot = p(x0, y1) * (1.0 - tx) + p(x1, y1) * tx;
            *v = top * (1.0 - ty) + bot * ty;
        }
        rgb
    }

    /// Bilinear sample of the alpha mask; zero outside the image.
    pub fn sample_alpha(&self, fx: f64, fy: f64) -> f64 {
        let a = |x: i64, y: i64| -> f64 {
            if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
                0.0
            } else {
                self.alpha_at(x as usize, y as usize) as f64
            }
        };
        let xf = fx.floor();
        let yf = fy.floor();
        let (tx, ty) = (fx - xf, fy - yf);
        let (x0, y0) = (xf as i64, yf as i64);
        let top = a(x0, y0) * (1.0 - tx) + a(x0 + 1, y0) * tx;
        let bot = a(x0, y0 + 1) * (1.0 - tx) + a(x0 + 1, y0 + 1) * tx;
        top * (1.0 - ty) + bot * ty
    }

    /// Channel-major float tensor `[3, h, w]` scaled to `[0, 1]`.
    pub fn to_chw<T: crate::net::Scalar>(&self) -> Vec<T> {
        let plane = self.width * self.height;
        let mut out = vec![T::zero(); 3 * plane];
        let scale = T::from_f64(1.0 / 255.0);
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * plane + i] = T::from_f64(px[c] as f64) * scale;
            }
        }
        out
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let res = match &self.alpha {
            None => image::RgbImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
                .expect("buffer length checked at construction")
                .save_with_format(path, image::ImageFormat::Png),
            Some(alpha) => {
                let mut rgba = Vec::with_capacity(self.width * self.height * 4);
                for (px, &a) in self.data.chunks_exact(3).zip(alpha) {
                    rgba.extend_from_slice(px);
                    rgba.push(a);
                }
                image::RgbaImage::from_raw(self.width as u32, self.height as u32, rgba)
                    .expect("buffer length checked at construction")
                    .save_with_format(path, image::ImageFormat::Png)
            }
        };
        res.map_err(|source| codec_error(path, source))
    }

    /// Load a PNG (or any format the codec recognizes). RGBA inputs keep their alpha.
    pub fn load(path: &Path) -> Result<Self> {
        let dynimg = image::open(path).map_err(|source| codec_error(path, source))?;
        let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
        if dynimg.color().has_alpha() {
            let rgba = dynimg.into_rgba8().into_raw();
            let mut data = Vec::with_capacity(w * h * 3);
            let mut alpha = Vec::with_capacity(w * h);
            for px in rgba.chunks_exact(4) {
                data.extend_from_slice(&px[..3]);
                alpha.push(px[3]);
            }
            Image::new(w, h, data)?.with_alpha(alpha)
        } else {
            Image::new(w, h, dynimg.into_rgb8().into_raw())
        }
    }
}

fn codec_error(path: &Path, source: image::ImageError) -> Error {
    match source {
        image::ImageError::IoError(e) => Error::io(path, e),
        other => Error::Codec { path: path.to_path_buf(), source: other },
    }
}

#[inline]
fn bilinear_taps(f: f64, len: usize) -> (usize, usize, f64) {
    let max = (len - 1) as f64;
    let f = f.clamp(0.0, max);
    let i0 = f.floor();
    let t = f - i0;
    let i0 = i0 as usize;
    (i0, (i0 + 1).min(len - 1), t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_buffer_length() {
        assert!(Image::new(2, 2, vec![0; 11]).is_err());
        let img = Image::new(2, 2, vec![0; 12]).unwrap();
        assert!(img.with_alpha(vec![0; 3]).is_err());
    }

    #[test]
    fn same_size_resample_is_identity() {
        let img = Image::from_fn(5, 4, |x, y| [(x * 40) as u8, (y * 50) as u8, (x * y) as u8]);
        let out = img.resample_region(0.0, 0.0, 5.0, 4.0, 5, 4);
        assert_eq!(out, img);
    }

    #[test]
    fn quantize_rounds_half_up() {
        assert_eq!(quantize(76.245), 76);
        assert_eq!(quantize(2.5), 3);
        assert_eq!(quantize(-3.0), 0);
        assert_eq!(quantize(300.0), 255);
    }

    #[test]
    fn png_round_trip_keeps_alpha() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let img = Image::from_fn(3, 2, |x, y| [x as u8, y as u8, 9])
            .with_alpha(vec![0, 255, 128, 1, 2, 3])
            .unwrap();
        img.save_png(&path).unwrap();
        assert_eq!(Image::load(&path).unwrap(), img);
    }
}
