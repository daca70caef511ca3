//! Dense kernels shared by the forward and backward passes. Matrices are
//! row-major `f64` slices; strides let attention address one head's columns
//! in place.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use super::Tensor;

pub(crate) const LN_EPS: f64 = 1e-6;

/// Strided view of an `rows x cols` matrix inside a slice.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub data: &'a [f64],
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a> View<'a> {
    pub fn dense(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self { data, offset: 0, rows, cols, rs: cols, cs: 1 }
    }

    pub fn t(self) -> Self {
        Self { rows: self.cols, cols: self.rows, rs: self.cs, cs: self.rs, ..self }
    }

    /// Columns `[start, start + width)`.
    pub fn cols(self, start: usize, width: usize) -> Self {
        Self { offset: self.offset + start * self.cs, cols: width, ..self }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = self.offset + (self.rows - 1) * self.rs + (self.cols - 1) * self.cs;
            assert!(last < self.data.len(), "matrix view out of bounds");
        }
    }
}

/// Mutable strided destination.
pub(crate) struct ViewMut<'a> {
    pub data: &'a mut [f64],
    pub offset: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a> ViewMut<'a> {
    pub fn dense(data: &'a mut [f64], cols: usize) -> Self {
        Self { data, offset: 0, rs: cols, cs: 1 }
    }

    pub fn cols(data: &'a mut [f64], row_stride: usize, start: usize) -> Self {
        Self { data, offset: start, rs: row_stride, cs: 1 }
    }
}

/// `c = alpha * a * b + beta * c`.
pub(crate) fn gemm(alpha: f64, a: View<'_>, b: View<'_>, beta: f64, c: ViewMut<'_>) {
    assert_eq!(a.cols, b.rows, "inner dimensions differ");
    a.check();
    b.check();
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m > 0 && n > 0 {
        let last = c.offset + (m - 1) * c.rs + (n - 1) * c.cs;
        assert!(last < c.data.len(), "gemm destination out of bounds");
    }
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: all three views were bounds-checked above for the full
    // m x k, k x n and m x n index ranges with their strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr().add(a.offset),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr().add(b.offset),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr().add(c.offset),
            c.rs as isize,
            c.cs as isize,
        );
    }
}

/// `x[rows, in] * w[in, out] + b`.
pub(crate) fn linear(x: &[f64], rows: usize, w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (din, dout) = (w.shape[0], w.shape[1]);
    let mut y = Vec::with_capacity(rows * dout);
    for _ in 0..rows {
        y.extend_from_slice(&b.data);
    }
    gemm(
        1.0,
        View::dense(x, rows, din),
        View::dense(&w.data, din, dout),
        1.0,
        ViewMut::dense(&mut y, dout),
    );
    y
}

/// Accumulates weight and bias gradients of [`linear`].
pub(crate) fn linear_param_grads(x: &[f64], rows: usize, dy: &[f64], dw: &mut Tensor, db: &mut Tensor) {
    let (din, dout) = (dw.shape[0], dw.shape[1]);
    gemm(
        1.0,
        View::dense(x, rows, din).t(),
        View::dense(dy, rows, dout),
        1.0,
        ViewMut::dense(&mut dw.data, dout),
    );
    for row in dy.chunks_exact(dout) {
        for (g, v) in db.data.iter_mut().zip(row) {
            *g += v;
        }
    }
}

/// Accumulates weight and bias gradients of [`linear`] and returns `dx`.
pub(crate) fn linear_backward(
    x: &[f64],
    rows: usize,
    w: &Tensor,
    dy: &[f64],
    dw: &mut Tensor,
    db: &mut Tensor,
) -> Vec<f64> {
    let (din, dout) = (w.shape[0], w.shape[1]);
    linear_param_grads(x, rows, dy, dw, db);
    let mut dx = vec![0.0; rows * din];
    gemm(
        1.0,
        View::dense(dy, rows, dout),
        View::dense(&w.data, din, dout).t(),
        0.0,
        ViewMut::dense(&mut dx, din),
    );
    dx
}

#[derive(Debug, Clone, Default)]
pub(crate) struct LnCache {
    pub xhat: Vec<f64>,
    pub rstd: Vec<f64>,
}

pub(crate) fn layer_norm(x: &[f64], dim: usize, scale: &Tensor, shift: &Tensor) -> (Vec<f64>, LnCache) {
    let rows = x.len() / dim;
    let mut y = Vec::with_capacity(x.len());
    let mut xhat = Vec::with_capacity(x.len());
    let mut rstd = Vec::with_capacity(rows);
    for row in x.chunks_exact(dim) {
        let mean = row.iter().sum::<f64>() / dim as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / dim as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        rstd.push(r);
        for (j, &v) in row.iter().enumerate() {
            let h = (v - mean) * r;
            xhat.push(h);
            y.push(h * scale.data[j] + shift.data[j]);
        }
    }
    (y, LnCache { xhat, rstd })
}

pub(crate) fn layer_norm_backward(
    dy: &[f64],
    dim: usize,
    cache: &LnCache,
    scale: &Tensor,
    dscale: &mut Tensor,
    dshift: &mut Tensor,
) -> Vec<f64> {
    let mut dx = Vec::with_capacity(dy.len());
    let mut dxhat = vec![0.0; dim];
    for ((dyr, xh), &r) in dy.chunks_exact(dim).zip(cache.xhat.chunks_exact(dim)).zip(&cache.rstd) {
        let (mut mean_d, mut mean_dx) = (0.0, 0.0);
        for j in 0..dim {
            dscale.data[j] += dyr[j] * xh[j];
            dshift.data[j] += dyr[j];
            dxhat[j] = dyr[j] * scale.data[j];
            mean_d += dxhat[j];
            mean_dx += dxhat[j] * xh[j];
        }
        mean_d /= dim as f64;
        mean_dx /= dim as f64;
        for j in 0..dim {
            dx.push(r * (dxhat[j] - mean_d - xh[j] * mean_dx));
        }
    }
    dx
}

/// Exact GELU, `x * Phi(x)`.
#[inline]
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

#[inline]
pub(crate) fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    cdf + x * pdf
}

/// In-place numerically stable softmax of one row.
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}
