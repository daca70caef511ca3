use serde::{Deserialize, Serialize};

use crate::error::{param_err, shape_err, Result, SmtError};

/// Single-channel image in row-major order. Values are nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LuminanceImage {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl LuminanceImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return shape_err(format!("image dimensions must be positive, got {height}x{width}"));
        }
        if pixels.len() != height * width {
            return shape_err(format!(
                "{height}x{width} image needs {} pixels, got {}",
                height * width,
                pixels.len()
            ));
        }
        if let Some(i) = pixels.iter().position(|v| !v.is_finite()) {
            return param_err(format!(
                "non-finite pixel {} at ({}, {})",
                pixels[i],
                i / width,
                i % width
            ));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    /// Builds an image by evaluating `f(row, col)` at every pixel.
    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut pixels = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                pixels.push(f(r, c));
            }
        }
        Self::new(height, width, pixels)
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    /// Internal constructor for buffers produced by finite arithmetic on valid images.
    pub(crate) fn from_raw(height: usize, width: usize, pixels: Vec<f64>) -> Self {
        debug_assert_eq!(pixels.len(), height * width);
        Self {
            height,
            width,
            pixels,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.height, self.width, self.pixels.iter().map(|&v| f(v)).collect())
    }

    pub fn scaled(&self, alpha: f64) -> Result<Self> {
        self.map(|v| alpha * v)
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.pixels
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn max_abs(&self) -> f64 {
        self.pixels.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub(crate) fn ensure_same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return shape_err(format!(
                "{what}: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            ));
        }
        Ok(())
    }

    /// Elementwise combination of two equally shaped images.
    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.ensure_same_shape(other, "elementwise operands")?;
        let pixels = self
            .pixels
            .iter()
            .zip(&other.pixels)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::new(self.height, self.width, pixels)
    }
}

/// Three-channel image, channels interleaved per pixel (`[r, g, b, r, g, b, ...]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RgbImage {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl RgbImage {
    pub const CHANNELS: usize = 3;

    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return shape_err(format!("image dimensions must be positive, got {height}x{width}"));
        }
        if pixels.len() != height * width * Self::CHANNELS {
            return shape_err(format!(
                "{height}x{width} RGB image needs {} values, got {}",
                height * width * Self::CHANNELS,
                pixels.len()
            ));
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(SmtError::Parameter("non-finite RGB value".into()));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        f: impl Fn(usize, usize) -> [f64; 3],
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(height * width * 3);
        for r in 0..height {
            for c in 0..width {
                pixels.extend_from_slice(&f(r, c));
            }
        }
        Self::new(height, width, pixels)
    }

    /// Replicates a luminance image into three identical channels.
    pub fn from_gray(gray: &LuminanceImage) -> Self {
        let pixels = gray.pixels().iter().flat_map(|&v| [v, v, v]).collect();
        Self {
            height: gray.height(),
            width: gray.width(),
            pixels,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.height, self.width, self.pixels.iter().map(|&v| f(v)).collect())
    }

    pub fn scaled(&self, alpha: f64) -> Result<Self> {
        self.map(|v| alpha * v)
    }
}

/// Rec.601 luma: `0.299 R + 0.587 G + 0.114 B`.
pub fn to_luminance(img: &RgbImage) -> LuminanceImage {
    let pixels = img
        .pixels()
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
        .collect();
    LuminanceImage::from_raw(img.height(), img.width(), pixels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_pixels() {
        assert!(LuminanceImage::new(1, 2, vec![0.0, f64::NAN]).is_err());
        assert!(RgbImage::new(1, 1, vec![0.0, f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn rejects_wrong_buffer_length() {
        assert!(matches!(
            LuminanceImage::new(2, 2, vec![0.0; 3]),
            Err(SmtError::Shape(_))
        ));
        assert!(matches!(RgbImage::new(1, 1, vec![0.0; 4]), Err(SmtError::Shape(_))));
    }

    #[test]
    fn luminance_of_white_is_one() {
        let img = RgbImage::new(1, 1, vec![1.0, 1.0, 1.0]).unwrap();
        assert!((to_luminance(&img).get(0, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn luminance_of_pure_red() {
        let img = RgbImage::new(1, 1, vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(to_luminance(&img).get(0, 0), 0.299);
    }

    #[test]
    fn luminance_matches_scalar_loop() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let vals: Vec<f64> = (0..48).map(|_| rng.random::<f64>()).collect();
        let img = RgbImage::new(4, 4, vals.clone()).unwrap();
        let lum = to_luminance(&img);
        for r in 0..4 {
            for c in 0..4 {
                let i = (r * 4 + c) * 3;
                let expected = vals[i] * 0.299 + vals[i + 1] * 0.587 + vals[i + 2] * 0.114;
                assert!((lum.get(r, c) - expected).abs() < 1e-15);
            }
        }
    }
}
