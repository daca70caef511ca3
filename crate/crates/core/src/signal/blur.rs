use std::f64::consts::PI;

use crate::error::{param_err, Result};
use crate::signal::fft::{crop, fft2, ifft2_real, reflect_pad};
use crate::signal::{LuminanceImage, BOUNDARY_PAD};

/// Frequency response of the unit-sum sampled Gaussian along one axis.
///
/// Sampling the spatial Gaussian on the pixel lattice periodizes its
/// continuous transfer `exp(-2 pi^2 sigma^2 f^2)`; the alias sum is carried
/// until the terms underflow, then normalized so the DC gain is exactly 1.
fn sampled_gaussian_response(sigma: f64, f: f64) -> f64 {
    let a = 2.0 * PI * PI * sigma * sigma;
    let terms = (1.5 / sigma).ceil() as i64 + 2;
    let alias_sum = |f: f64| -> f64 { (-terms..=terms).map(|k| (-a * (f + k as f64).powi(2)).exp()).sum() };
    alias_sum(f) / alias_sum(0.0)
}

/// Centered 1D frequency coordinate (cycles/pixel) of bin `i` in a length-`n` axis.
#[inline]
pub(crate) fn centered_frequency(i: usize, n: usize) -> f64 {
    (i as f64 - (n / 2) as f64) / n as f64
}

/// Separable centered transfer function of the Gaussian for an `h x w` grid.
pub fn gaussian_transfer(height: usize, width: usize, sigma: f64) -> Vec<f64> {
    let ty: Vec<f64> = (0..height)
        .map(|r| sampled_gaussian_response(sigma, centered_frequency(r, height)))
        .collect();
    let tx: Vec<f64> = (0..width)
        .map(|c| sampled_gaussian_response(sigma, centered_frequency(c, width)))
        .collect();
    let mut out = Vec::with_capacity(height * width);
    for &gy in &ty {
        out.extend(tx.iter().map(|&gx| gy * gx));
    }
    out
}

/// Gaussian blur with standard deviation `sigma` pixels, applied in the
/// frequency domain after reflect-padding by [`BOUNDARY_PAD`].
pub fn gaussian_blur(img: &LuminanceImage, sigma: f64) -> Result<LuminanceImage> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return param_err(format!("blur sigma must be positive, got {sigma}"));
    }
    let padded = reflect_pad(img, BOUNDARY_PAD);
    let (h, w) = padded.shape();
    let spec = fft2(&padded).multiply_real(&gaussian_transfer(h, w, sigma))?;
    crop(&ifft2_real(&spec)?, BOUNDARY_PAD)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> LuminanceImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LuminanceImage::new(h, w, (0..h * w).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    /// Direct spatial convolution with the normalized sampled Gaussian,
    /// treating everything outside the image as zero.
    fn spatial_blur_oracle(img: &LuminanceImage, sigma: f64) -> LuminanceImage {
        let radius = (12.0 * sigma).ceil() as isize;
        let taps: Vec<f64> = (-radius..=radius)
            .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
            .collect();
        let norm: f64 = taps.iter().sum();
        let (h, w) = img.shape();
        LuminanceImage::from_fn(h, w, |r, c| {
            let mut acc = 0.0;
            for (i, ty) in taps.iter().enumerate() {
                let rr = r as isize + i as isize - radius;
                if rr < 0 || rr >= h as isize {
                    continue;
                }
                for (j, tx) in taps.iter().enumerate() {
                    let cc = c as isize + j as isize - radius;
                    if cc < 0 || cc >= w as isize {
                        continue;
                    }
                    acc += ty * tx * img.get(rr as usize, cc as usize);
                }
            }
            acc / (norm * norm)
        })
        .unwrap()
    }

    #[test]
    fn constant_image_is_fixed_point() {
        for &sigma in &[0.5, 1.0, 3.0, 10.0] {
            let img = LuminanceImage::constant(24, 20, 0.7).unwrap();
            let out = gaussian_blur(&img, sigma).unwrap();
            for &v in out.pixels() {
                assert!((v - 0.7).abs() < 1e-12, "sigma {sigma}: {v}");
            }
        }
    }

    #[test]
    fn impulse_matches_spatial_convolution() {
        let img =
            LuminanceImage::from_fn(48, 48, |r, c| if (r, c) == (24, 24) { 1.0 } else { 0.0 })
                .unwrap();
        let got = gaussian_blur(&img, 1.0).unwrap();
        let want = spatial_blur_oracle(&img, 1.0);
        for r in 8..40 {
            for c in 8..40 {
                assert!((got.get(r, c) - want.get(r, c)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn random_image_interior_matches_spatial_convolution() {
        let img = random_image(40, 40, 1);
        let got = gaussian_blur(&img, 1.5).unwrap();
        let want = spatial_blur_oracle(&img, 1.5);
        for r in 14..26 {
            for c in 14..26 {
                assert!((got.get(r, c) - want.get(r, c)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn large_sigma_flattens_towards_mean() {
        let img = random_image(64, 64, 2);
        let out = gaussian_blur(&img, 200.0).unwrap();
        let (lo, hi) = out.min_max();
        assert!(hi - lo < 1e-6);
        assert!((out.mean() - img.mean()).abs() < 0.02);
    }

    #[test]
    fn rejects_non_positive_sigma() {
        let img = LuminanceImage::constant(16, 16, 1.0).unwrap();
        assert!(gaussian_blur(&img, 0.0).is_err());
        assert!(gaussian_blur(&img, -1.0).is_err());
        assert!(gaussian_blur(&img, f64::NAN).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn blur_is_linear(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0, sigma in 0.5f64..3.0) {
            let x = random_image(20, 24, seed);
            let y = random_image(20, 24, seed + 1);
            let combo = x.zip_map(&y, |u, v| a * u + b * v).unwrap();
            let lhs = gaussian_blur(&combo, sigma).unwrap();
            let bx = gaussian_blur(&x, sigma).unwrap();
            let by = gaussian_blur(&y, sigma).unwrap();
            for i in 0..lhs.pixels().len() {
                let rhs = a * bx.pixels()[i] + b * by.pixels()[i];
                prop_assert!((lhs.pixels()[i] - rhs).abs() < 1e-10);
            }
        }

        #[test]
        fn blur_preserves_mean(seed in 0u64..1000, sigma in 0.5f64..3.0) {
            let x = random_image(32, 28, seed);
            let out = gaussian_blur(&x, sigma).unwrap();
            prop_assert!((out.mean() - x.mean()).abs() < 1e-10);
        }
    }
}
