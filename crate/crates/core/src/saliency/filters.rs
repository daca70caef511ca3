use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use crate::error::{shape_err, Result};
use crate::saliency::CurvatureParams;
use crate::signal::{
    crop, fft2, ifft2_real_with_floor, polar_grid, reflect_pad, LuminanceImage, PolarFreqGrid, BOUNDARY_PAD,
};

/// Centered transfer functions of the Laplace, cosine and sine components.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    height: usize,
    width: usize,
    pub laplace_tf: Vec<Complex64>,
    pub cos_tf: Vec<Complex64>,
    pub sin_tf: Vec<Complex64>,
}

/// Spatial responses of the three filter components.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterResponses {
    pub laplace: LuminanceImage,
    pub cos: LuminanceImage,
    pub sin: LuminanceImage,
}

/// Radial band-pass `(2 pi r)^2 exp(-pi r^2 / sigma_r^2)`.
pub(crate) fn radial_profile(r: f64, sigma_r: f64) -> f64 {
    let w = 2.0 * PI * r;
    w * w * (-PI * r * r / (sigma_r * sigma_r)).exp()
}

/// `i^n`
fn i_pow(n: u32) -> Complex64 {
    match n % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, 1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, -1.0),
    }
}

pub fn build_filter_bank(grid: &PolarFreqGrid, cp: &CurvatureParams) -> FilterBank {
    let (h, w) = grid.shape();
    let phase = i_pow(cp.n);
    let n = cp.n as f64;
    let mut laplace_tf = Vec::with_capacity(h * w);
    let mut cos_tf = Vec::with_capacity(h * w);
    let mut sin_tf = Vec::with_capacity(h * w);
    for row in 0..h {
        for col in 0..w {
            let i = row * w + col;
            // An even-length axis has a Nyquist bin with no negative-frequency
            // partner; a non-Hermitian value there leaks an imaginary part
            // into the spatial response, so all components are zero on it.
            let unpaired = (h % 2 == 0 && row == 0) || (w % 2 == 0 && col == 0);
            let (r, phi) = (grid.r[i], grid.phi[i]);
            let g = if unpaired || r == 0.0 { 0.0 } else { radial_profile(r, cp.sigma_r) };
            laplace_tf.push(Complex64::new(g, 0.0));
            cos_tf.push(phase * ((n * phi).cos() * g));
            sin_tf.push(phase * ((n * phi).sin() * g));
        }
    }
    FilterBank {
        height: h,
        width: w,
        laplace_tf,
        cos_tf,
        sin_tf,
    }
}

impl FilterBank {
    /// Bank sized for an `height x width` image after boundary padding.
    pub fn for_image(height: usize, width: usize, cp: &CurvatureParams) -> Result<Self> {
        cp.validate()?;
        let grid = polar_grid(height + 2 * BOUNDARY_PAD, width + 2 * BOUNDARY_PAD)?;
        Ok(build_filter_bank(&grid, cp))
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

/// Filters the contrast image with all three components.
pub fn apply_filter_bank(contrast: &LuminanceImage, fb: &FilterBank) -> Result<FilterResponses> {
    let padded = reflect_pad(contrast, BOUNDARY_PAD);
    if padded.shape() != fb.shape() {
        return shape_err(format!(
            "filter bank is {}x{}, padded image is {}x{}",
            fb.height,
            fb.width,
            padded.height(),
            padded.width()
        ));
    }
    let spec = fft2(&padded);
    let peak_gain = fb.laplace_tf.iter().fold(0.0f64, |m, z| m.max(z.norm()));
    let floor = 1e-6 * peak_gain * padded.max_abs();
    let respond = |tf: &[Complex64]| -> Result<LuminanceImage> {
        crop(&ifft2_real_with_floor(&spec.multiply(tf)?, floor)?, BOUNDARY_PAD)
    };
    Ok(FilterResponses {
        laplace: respond(&fb.laplace_tf)?,
        cos: respond(&fb.cos_tf)?,
        sin: respond(&fb.sin_tf)?,
    })
}
