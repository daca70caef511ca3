use crate::error::{param_err, Result};
use crate::signal::blur::centered_frequency;

/// Radial frequency magnitude and angle for every bin of a centered spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarFreqGrid {
    height: usize,
    width: usize,
    /// Cycles per pixel, `>= 0`.
    pub r: Vec<f64>,
    /// `atan2(f_y, f_x)` in `(-pi, pi]`; `f_y` grows with the row index.
    pub phi: Vec<f64>,
}

impl PolarFreqGrid {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

pub fn polar_grid(height: usize, width: usize) -> Result<PolarFreqGrid> {
    if height < 2 || width < 2 {
        return param_err(format!("polar grid needs at least 2x2, got {height}x{width}"));
    }
    let mut r = Vec::with_capacity(height * width);
    let mut phi = Vec::with_capacity(height * width);
    for row in 0..height {
        let fy = centered_frequency(row, height);
        for col in 0..width {
            let fx = centered_frequency(col, width);
            r.push(fx.hypot(fy));
            phi.push(fy.atan2(fx));
        }
    }
    Ok(PolarFreqGrid {
        height,
        width,
        r,
        phi,
    })
}
