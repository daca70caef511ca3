//! Image containers, PNG I/O, 2D FFT helpers, Gaussian blur and centered
//! polar frequency grids.
//!
//! All arithmetic is `f64`. Frequencies are in cycles per pixel, so Nyquist
//! is 0.5 regardless of image size. Every frequency-domain filter first
//! reflect-pads its input by [`BOUNDARY_PAD`] pixels and crops afterwards so
//! the periodic DFT does not wrap one border onto the other.

mod blur;
mod fft;
mod grid;
mod image;
mod io;

pub use self::blur::{gaussian_blur, gaussian_transfer};
pub use self::fft::{crop, fft2, ifft2_real, reflect_pad, Spectrum, IMAG_RESIDUE_TOL};
pub(crate) use self::fft::ifft2_real_with_floor;
pub use self::grid::{polar_grid, PolarFreqGrid};
pub use self::image::{to_luminance, LuminanceImage, RgbImage};
pub use self::io::{load_image, resize_rgb, save_gray16, save_gray8, save_rgb8};


/// Pixels of mirrored border added before any FFT filtering.
pub const BOUNDARY_PAD: usize = 16;

/// Smallest image side the saliency operator accepts.
pub const MIN_SALIENCY_SIDE: usize = 16;
