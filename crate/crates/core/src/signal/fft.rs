use rustfft::num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

use crate::error::{param_err, Result, SmtError};
use crate::signal::LuminanceImage;

/// Imaginary residue tolerated by [`ifft2_real`], relative to the largest real output.
pub const IMAG_RESIDUE_TOL: f64 = 1e-8;

/// Complex 2D spectrum with the zero frequency shifted to the array center
/// (index `height / 2, width / 2`).
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    height: usize,
    width: usize,
    data: Vec<Complex64>,
}

impl Spectrum {
    pub fn new(height: usize, width: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != height * width || height == 0 || width == 0 {
            return Err(SmtError::Shape(format!(
                "spectrum {height}x{width} with {} bins",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
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

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.width + col]
    }

    /// Pointwise product with a centered transfer function of the same shape.
    pub fn multiply(&self, transfer: &[Complex64]) -> Result<Spectrum> {
        if transfer.len() != self.data.len() {
            return Err(SmtError::Shape(format!(
                "transfer function has {} bins, spectrum has {}",
                transfer.len(),
                self.data.len()
            )));
        }
        let data = self.data.iter().zip(transfer).map(|(a, b)| a * b).collect();
        Ok(Spectrum { data, ..*self })
    }

    /// Pointwise product with a real centered transfer function.
    pub fn multiply_real(&self, transfer: &[f64]) -> Result<Spectrum> {
        if transfer.len() != self.data.len() {
            return Err(SmtError::Shape(format!(
                "transfer function has {} bins, spectrum has {}",
                transfer.len(),
                self.data.len()
            )));
        }
        let data = self.data.iter().zip(transfer).map(|(a, &b)| a * b).collect();
        Ok(Spectrum { data, ..*self })
    }
}

fn transform_2d(data: &mut [Complex64], height: usize, width: usize, direction: FftDirection) {
    let mut planner = FftPlanner::<f64>::new();
    let row_fft = planner.plan_fft(width, direction);
    for row in data.chunks_exact_mut(width) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft(height, direction);
    let mut column = vec![Complex64::default(); height];
    for c in 0..width {
        for r in 0..height {
            column[r] = data[r * width + c];
        }
        col_fft.process(&mut column);
        for r in 0..height {
            data[r * width + c] = column[r];
        }
    }
}

/// Moves element `(r, c)` to `((r + dr) mod h, (c + dc) mod w)`.
fn roll(data: &[Complex64], height: usize, width: usize, dr: usize, dc: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::default(); data.len()];
    for r in 0..height {
        let rr = (r + dr) % height;
        for c in 0..width {
            out[rr * width + (c + dc) % width] = data[r * width + c];
        }
    }
    out
}

fn fftshift(data: &[Complex64], height: usize, width: usize) -> Vec<Complex64> {
    roll(data, height, width, height / 2, width / 2)
}

fn ifftshift(data: &[Complex64], height: usize, width: usize) -> Vec<Complex64> {
    roll(data, height, width, height - height / 2, width - width / 2)
}

/// Forward 2D DFT of a real image, returned zero-frequency centered.
pub fn fft2(img: &LuminanceImage) -> Spectrum {
    let (h, w) = img.shape();
    let mut data: Vec<Complex64> = img.pixels().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform_2d(&mut data, h, w, FftDirection::Forward);
    Spectrum {
        height: h,
        width: w,
        data: fftshift(&data, h, w),
    }
}

/// Inverse 2D DFT of a centered spectrum that should correspond to a real signal.
///
/// The imaginary part is discarded after checking that it is negligible; a
/// large residue means a transfer function broke conjugate symmetry.
pub fn ifft2_real(spec: &Spectrum) -> Result<LuminanceImage> {
    let n = (spec.height * spec.width) as f64;
    // |x_k| <= sum |X| / N bounds every output; rounding noise scales with it.
    let magnitude_bound = spec.data.iter().map(|z| z.norm()).sum::<f64>() / n;
    ifft2_real_with_floor(spec, 1e-4 * magnitude_bound)
}

/// [`ifft2_real`] with the residue tolerance measured against
/// `max(max |real|, scale_floor)`.
///
/// Filters that nearly annihilate their input produce outputs at rounding
/// level; `scale_floor` should then reflect the scale of the unfiltered
/// signal so rounding noise is not mistaken for a symmetry defect.
pub(crate) fn ifft2_real_with_floor(spec: &Spectrum, scale_floor: f64) -> Result<LuminanceImage> {
    let (h, w) = spec.shape();
    let n = (h * w) as f64;
    let mut data = ifftshift(&spec.data, h, w);
    transform_2d(&mut data, h, w, FftDirection::Inverse);

    let mut max_real = 0.0f64;
    let mut max_imag = 0.0f64;
    let pixels: Vec<f64> = data
        .iter()
        .map(|z| {
            let re = z.re / n;
            max_real = max_real.max(re.abs());
            max_imag = max_imag.max((z.im / n).abs());
            re
        })
        .collect();
    if !(max_imag <= IMAG_RESIDUE_TOL * max_real.max(scale_floor)) {
        return Err(SmtError::Numerical(format!(
            "inverse FFT imaginary residue {max_imag:.3e} exceeds {IMAG_RESIDUE_TOL:.0e} x max real {max_real:.3e}"
        )));
    }
    if pixels.iter().any(|v| !v.is_finite()) {
        return Err(SmtError::Numerical("inverse FFT produced non-finite values".into()));
    }
    Ok(LuminanceImage::from_raw(h, w, pixels))
}

/// Maps an out-of-range index onto `[0, n)` by half-sample symmetric
/// reflection (`-1 -> 0`, `n -> n - 1`).
pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Extends the image by `pad` pixels on every side with mirrored content.
pub fn reflect_pad(img: &LuminanceImage, pad: usize) -> LuminanceImage {
    let (h, w) = img.shape();
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut pixels = Vec::with_capacity(ph * pw);
    for r in 0..ph {
        let sr = reflect_index(r as isize - pad as isize, h);
        for c in 0..pw {
            let sc = reflect_index(c as isize - pad as isize, w);
            pixels.push(img.get(sr, sc));
        }
    }
    LuminanceImage::from_raw(ph, pw, pixels)
}

/// Removes a `pad`-pixel border.
pub fn crop(img: &LuminanceImage, pad: usize) -> Result<LuminanceImage> {
    let (h, w) = img.shape();
    if h <= 2 * pad || w <= 2 * pad {
        return param_err(format!("cannot crop {pad} px from a {h}x{w} image"));
    }
    let (ch, cw) = (h - 2 * pad, w - 2 * pad);
    let mut pixels = Vec::with_capacity(ch * cw);
    for r in 0..ch {
        let start = (r + pad) * w + pad;
        pixels.extend_from_slice(&img.pixels()[start..start + cw]);
    }
    Ok(LuminanceImage::from_raw(ch, cw, pixels))
}
