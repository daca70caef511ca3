use crate::error::Result;
use crate::saliency::{SaliencyMap, SaliencyParams};
use crate::signal::LuminanceImage;

/// `sqrt(C^2 + S^2)` per pixel.
pub fn eccentricity(c_resp: &LuminanceImage, s_resp: &LuminanceImage) -> Result<LuminanceImage> {
    c_resp.zip_map(s_resp, f64::hypot)
}

/// `Laplace^2 - Ecc^2` per pixel.
pub fn curvature(laplace: &LuminanceImage, ecc: &LuminanceImage) -> Result<LuminanceImage> {
    laplace.zip_map(ecc, |l, e| l * l - e * e)
}

pub fn curvature_abs(d: &LuminanceImage, params: SaliencyParams) -> SaliencyMap {
    let values = d.map(f64::abs).expect("absolute value of a finite image is finite");
    SaliencyMap::new(values, params)
}
