use crate::error::{param_err, Result};
use crate::signal::{gaussian_blur, LuminanceImage};

/// Hessian determinant `l_xx l_yy - l_xy^2` from central differences,
/// optionally after Gaussian smoothing. The outermost pixel ring is 0.
///
/// This is a spatial-domain i2D detector kept for cross-checking the
/// frequency-domain curvature operator.
pub fn hessian_curvature_oracle(img: &LuminanceImage, pre_sigma: f64) -> Result<LuminanceImage> {
    if !(pre_sigma >= 0.0 && pre_sigma.is_finite()) {
        return param_err(format!("pre-smoothing sigma must be >= 0, got {pre_sigma}"));
    }
    let l = if pre_sigma > 0.0 {
        gaussian_blur(img, pre_sigma)?
    } else {
        img.clone()
    };
    let (h, w) = l.shape();
    let mut out = vec![0.0; h * w];
    for r in 1..h.saturating_sub(1) {
        for c in 1..w.saturating_sub(1) {
            let lxx = l.get(r, c + 1) - 2.0 * l.get(r, c) + l.get(r, c - 1);
            let lyy = l.get(r + 1, c) - 2.0 * l.get(r, c) + l.get(r - 1, c);
            let lxy = (l.get(r + 1, c + 1) - l.get(r + 1, c - 1) - l.get(r - 1, c + 1)
                + l.get(r - 1, c - 1))
                / 4.0;
            out[r * w + c] = lxx * lyy - lxy * lxy;
        }
    }
    LuminanceImage::new(h, w, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_is_flat() {
        let img = LuminanceImage::constant(10, 10, 0.3).unwrap();
        let d = hessian_curvature_oracle(&img, 0.0).unwrap();
        assert!(d.max_abs() == 0.0);
    }

    #[test]
    fn paraboloid_has_determinant_four() {
        let img = LuminanceImage::from_fn(12, 12, |r, c| {
            let (x, y) = (c as f64 - 6.0, r as f64 - 6.0);
            x * x + y * y
        })
        .unwrap();
        let d = hessian_curvature_oracle(&img, 0.0).unwrap();
        for r in 1..11 {
            for c in 1..11 {
                assert!((d.get(r, c) - 4.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ramp_has_zero_determinant() {
        let img = LuminanceImage::from_fn(12, 12, |r, c| 0.3 * c as f64 - 0.7 * r as f64).unwrap();
        let d = hessian_curvature_oracle(&img, 0.0).unwrap();
        for r in 1..11 {
            for c in 1..11 {
                assert!(d.get(r, c).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn negative_sigma_rejected() {
        let img = LuminanceImage::constant(10, 10, 0.3).unwrap();
        assert!(hessian_curvature_oracle(&img, -1.0).is_err());
    }
}
