//! i2D saliency: a Ratio-of-Gaussians contrast stage followed by a
//! polar-separable curvature filter bank.
//!
//! The contrast image is filtered in the frequency domain by an isotropic
//! radial band-pass `g(r)` (the Laplace component) and by the same band-pass
//! modulated with `cos(n phi)` and `sin(n phi)`. Squared Laplace response
//! minus the squared norm of the two oriented responses vanishes for
//! constant (i0D) and straight (i1D) structure and survives at corners,
//! junctions and curved contours. Its magnitude is the saliency map.

mod curvature;
mod filters;
mod hessian;
mod rog;

use serde::{Deserialize, Serialize};

pub use self::curvature::{curvature, curvature_abs, eccentricity};
pub use self::filters::{apply_filter_bank, build_filter_bank, FilterBank, FilterResponses};
pub use self::hessian::hessian_curvature_oracle;
pub use self::rog::{rog_contrast, RogParams};

use crate::error::{param_err, Result};
use crate::signal::{LuminanceImage, MIN_SALIENCY_SIDE};

/// Angular order and radial bandwidth of the curvature filters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurvatureParams {
    /// Number of angular oscillations of the oriented filters.
    pub n: u32,
    /// Radial bandwidth; `g(r)` peaks at `sigma_r / sqrt(pi)` cycles/pixel.
    pub sigma_r: f64,
}

impl Default for CurvatureParams {
    fn default() -> Self {
        Self {
            n: 2,
            sigma_r: Self::sigma_r_for_peak(0.125),
        }
    }
}

impl CurvatureParams {
    /// Bandwidth whose radial profile peaks at `peak` cycles/pixel.
    pub fn sigma_r_for_peak(peak: f64) -> f64 {
        peak * std::f64::consts::PI.sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return param_err("curvature filter order n must be >= 1");
        }
        if !(self.sigma_r > 0.0 && self.sigma_r.is_finite()) {
            return param_err(format!("sigma_r must be positive, got {}", self.sigma_r));
        }
        Ok(())
    }
}

/// Both parameter groups of the saliency chain.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaliencyParams {
    pub rog: RogParams,
    pub curvature: CurvatureParams,
}

/// Per-pixel absolute curvature of the contrast image.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    values: LuminanceImage,
    pub params: SaliencyParams,
}

impl SaliencyMap {
    pub(crate) fn new(values: LuminanceImage, params: SaliencyParams) -> Self {
        debug_assert!(values.pixels().iter().all(|&v| v >= 0.0));
        Self { values, params }
    }

    /// Wraps precomputed values (e.g. read back from a cache).
    pub fn from_values(values: LuminanceImage, params: SaliencyParams) -> Result<Self> {
        if values.pixels().iter().any(|&v| v < 0.0) {
            return param_err("saliency values must be non-negative");
        }
        Ok(Self { values, params })
    }

    pub fn values(&self) -> &LuminanceImage {
        &self.values
    }

    pub fn height(&self) -> usize {
        self.values.height()
    }

    pub fn width(&self) -> usize {
        self.values.width()
    }

    /// Row-major position of the largest value (first one on ties).
    pub fn argmax(&self) -> (usize, usize) {
        let px = self.values.pixels();
        let mut best = 0;
        for (i, &v) in px.iter().enumerate() {
            if v > px[best] {
                best = i;
            }
        }
        (best / self.width(), best % self.width())
    }
}

/// Saliency operator with its filters prepared for one image size.
#[derive(Debug, Clone)]
pub struct SaliencyOperator {
    params: SaliencyParams,
    height: usize,
    width: usize,
    bank: FilterBank,
}

impl SaliencyOperator {
    pub fn new(params: SaliencyParams, height: usize, width: usize) -> Result<Self> {
        params.rog.validate()?;
        params.curvature.validate()?;
        if height < MIN_SALIENCY_SIDE || width < MIN_SALIENCY_SIDE {
            return param_err(format!(
                "saliency needs images of at least {MIN_SALIENCY_SIDE}x{MIN_SALIENCY_SIDE}, got {height}x{width}"
            ));
        }
        let bank = FilterBank::for_image(height, width, &params.curvature)?;
        Ok(Self {
            params,
            height,
            width,
            bank,
        })
    }

    pub fn params(&self) -> &SaliencyParams {
        &self.params
    }

    pub fn compute(&self, img: &LuminanceImage) -> Result<SaliencyMap> {
        if img.shape() != (self.height, self.width) {
            return param_err(format!(
                "operator prepared for {}x{}, image is {}x{}",
                self.height,
                self.width,
                img.height(),
                img.width()
            ));
        }
        let contrast = rog_contrast(img, &self.params.rog)?;
        let resp = apply_filter_bank(&contrast, &self.bank)?;
        let ecc = eccentricity(&resp.cos, &resp.sin)?;
        let d = curvature(&resp.laplace, &ecc)?;
        Ok(curvature_abs(&d, self.params))
    }
}

/// Full chain: contrast, filter bank, eccentricity, curvature, magnitude.
pub fn saliency_map(
    img: &LuminanceImage,
    rog: &RogParams,
    curv: &CurvatureParams,
) -> Result<SaliencyMap> {
    let params = SaliencyParams {
        rog: *rog,
        curvature: *curv,
    };
    SaliencyOperator::new(params, img.height(), img.width())?.compute(img)
}
