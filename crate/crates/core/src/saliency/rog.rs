use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result, SmtError};
use crate::signal::{gaussian_blur, LuminanceImage};

/// Center and surround blur widths (pixels) and the denominator stabilizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RogParams {
    pub sigma_center: f64,
    pub sigma_surround: f64,
    pub tau: f64,
}

impl Default for RogParams {
    fn default() -> Self {
        Self {
            sigma_center: 1.0,
            sigma_surround: 2.0,
            tau: 0.01,
        }
    }
}

impl RogParams {
    pub fn validate(&self) -> Result<()> {
        let finite = self.sigma_center.is_finite()
            && self.sigma_surround.is_finite()
            && self.tau.is_finite();
        if !finite || !(0.0 < self.sigma_center && self.sigma_center < self.sigma_surround) {
            return param_err(format!(
                "need 0 < sigma_center < sigma_surround, got {} and {}",
                self.sigma_center, self.sigma_surround
            ));
        }
        if self.tau < 0.0 {
            return param_err(format!("tau must be >= 0, got {}", self.tau));
        }
        Ok(())
    }
}

/// Ratio-of-Gaussians contrast: `blur(l, sc) / (blur(l, ss) + tau)`.
pub fn rog_contrast(img: &LuminanceImage, p: &RogParams) -> Result<LuminanceImage> {
    p.validate()?;
    if img.pixels().iter().any(|&v| v < 0.0) {
        return param_err("RoG contrast expects non-negative luminance");
    }
    let center = gaussian_blur(img, p.sigma_center)?;
    let surround = gaussian_blur(img, p.sigma_surround)?;
    if p.tau == 0.0 {
        if let Some(i) = surround.pixels().iter().position(|&d| d <= 0.0) {
            return Err(SmtError::DivisionDegeneracy(format!(
                "surround response {} at ({}, {}) with tau = 0",
                surround.pixels()[i],
                i / img.width(),
                i % img.width()
            )));
        }
    }
    center.zip_map(&surround, |num, den| num / (den + p.tau))
}
