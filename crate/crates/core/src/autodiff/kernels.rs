//! Row-wise and elementwise kernels shared by the forward, tangent and
//! adjoint passes.

use serde::{Deserialize, Serialize};

use crate::tensor::Real;

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
// 1/sqrt(2*pi)
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Scalar nonlinearities with first and second derivatives.
///
/// GeLU is the exact `x * Phi(x)` form; `erf` comes from `libm`, whose
/// rational approximations are accurate to well below 1e-7. ReLU's second
/// derivative is taken as zero everywhere, ignoring the kink at 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnaryFn {
    Gelu,
    Relu,
    Exp,
    Log,
}

impl UnaryFn {
    #[inline]
    pub fn value<T: Real>(self, x: T) -> T {
        match self {
            UnaryFn::Gelu => x * normal_cdf(x),
            UnaryFn::Relu => {
                if x > T::zero() {
                    x
                } else {
                    T::zero()
                }
            }
            UnaryFn::Exp => x.exp(),
            UnaryFn::Log => x.ln(),
        }
    }

    #[inline]
    pub fn d1<T: Real>(self, x: T) -> T {
        match self {
            UnaryFn::Gelu => normal_cdf(x) + x * normal_pdf(x),
            UnaryFn::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            UnaryFn::Exp => x.exp(),
            UnaryFn::Log => x.recip(),
        }
    }

    #[inline]
    pub fn d2<T: Real>(self, x: T) -> T {
        match self {
            UnaryFn::Gelu => normal_pdf(x) * (T::of(2.0) - x * x),
            UnaryFn::Relu => T::zero(),
            UnaryFn::Exp => x.exp(),
            UnaryFn::Log => -(x * x).recip(),
        }
    }
}

#[inline]
fn normal_cdf<T: Real>(x: T) -> T {
    T::of(0.5) * (T::one() + (x * T::of(FRAC_1_SQRT_2)).erf())
}

#[inline]
fn normal_pdf<T: Real>(x: T) -> T {
    T::of(INV_SQRT_2PI) * (-(x * x) * T::of(0.5)).exp()
}

/// Number of leading entries of row `row` that participate in a softmax.
#[inline]
pub(crate) fn active_width(row: usize, width: usize, causal: bool) -> usize {
    if causal {
        (row % width) + 1
    } else {
        width
    }
}

/// Row softmax. With `causal`, row `r` of each trailing `[w, w]` block only
/// sees columns `0..=r % w`; masked probabilities are exactly zero.
pub(crate) fn softmax_rows<T: Real>(x: &[T], width: usize, causal: bool) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for (r, (xr, yr)) in x.chunks(width).zip(out.chunks_mut(width)).enumerate() {
        let active = active_width(r, width, causal);
        let max = xr[..active].iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut sum = T::zero();
        for (y, &v) in yr[..active].iter_mut().zip(&xr[..active]) {
            *y = (v - max).exp();
            sum += *y;
        }
        let inv = sum.recip();
        for y in &mut yr[..active] {
            *y *= inv;
        }
    }
    out
}

/// `out = y * (g - <y, g>)` row-wise: the softmax Jacobian (symmetric) applied to `g`.
pub(crate) fn softmax_jvp_rows<T: Real>(y: &[T], g: &[T], width: usize) -> Vec<T> {
    let mut out = vec![T::zero(); y.len()];
    for ((yr, gr), or) in y.chunks(width).zip(g.chunks(width)).zip(out.chunks_mut(width)) {
        let inner: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        for ((o, &a), &b) in or.iter_mut().zip(yr).zip(gr) {
            *o = a * (b - inner);
        }
    }
    out
}

/// Tangent of the softmax adjoint:
/// `y' * (g - <y,g>) + y * (g' - <y',g> - <y,g'>)`.
pub(crate) fn softmax_adjoint_tangent_rows<T: Real>(
    y: &[T],
    y_t: Option<&[T]>,
    g: &[T],
    g_t: Option<&[T]>,
    width: usize,
) -> Vec<T> {
    let mut out = vec![T::zero(); y.len()];
    for (r, or) in out.chunks_mut(width).enumerate() {
        let span = r * width..(r + 1) * width;
        let yr = &y[span.clone()];
        let gr = &g[span.clone()];
        if let Some(y_t) = y_t {
            let ytr = &y_t[span.clone()];
            let yg: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
            let ytg: T = ytr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
            for j in 0..width {
                or[j] += ytr[j] * (gr[j] - yg) - yr[j] * ytg;
            }
        }
        if let Some(g_t) = g_t {
            let gtr = &g_t[span.clone()];
            let ygt: T = yr.iter().zip(gtr).map(|(&a, &b)| a * b).sum();
            for j in 0..width {
                or[j] += yr[j] * (gtr[j] - ygt);
            }
        }
    }
    out
}

/// Normalizes each row to zero mean and unit variance; returns the
/// normalized rows and `1 / sqrt(var + eps)` per row.
pub(crate) fn layer_norm_rows<T: Real>(x: &[T], width: usize, eps: T) -> (Vec<T>, Vec<T>) {
    let w = T::of(width as f64);
    let mut out = vec![T::zero(); x.len()];
    let mut inv_std = Vec::with_capacity(x.len() / width.max(1));
    for (xr, yr) in x.chunks(width).zip(out.chunks_mut(width)) {
        let mean = xr.iter().copied().sum::<T>() / w;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / w;
        let inv = (var + eps).sqrt().recip();
        for (y, &v) in yr.iter_mut().zip(xr) {
            *y = (v - mean) * inv;
        }
        inv_std.push(inv);
    }
    (out, inv_std)
}

/// `inv_std * (g - mean(g) - y * mean(y * g))` row-wise. This is both the
/// tangent map and (being symmetric) the adjoint map of layer norm.
pub(crate) fn layer_norm_apply_rows<T: Real>(y: &[T], inv_std: &[T], g: &[T], width: usize) -> Vec<T> {
    let w = T::of(width as f64);
    let mut out = vec![T::zero(); y.len()];
    for (((yr, gr), or), &inv) in y
        .chunks(width)
        .zip(g.chunks(width))
        .zip(out.chunks_mut(width))
        .zip(inv_std)
    {
        let mg = gr.iter().copied().sum::<T>() / w;
        let myg = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum::<T>() / w;
        for ((o, &a), &b) in or.iter_mut().zip(yr).zip(gr) {
            *o = inv * (b - mg - a * myg);
        }
    }
    out
}

/// Tangent of the layer-norm adjoint `inv_std * u(y, g)` along input
/// tangent `x'` (output tangent `y'`) and adjoint tangent `g'`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn layer_norm_adjoint_tangent_rows<T: Real>(
    y: &[T],
    inv_std: &[T],
    g: &[T],
    x_t: Option<&[T]>,
    y_t: Option<&[T]>,
    g_t: Option<&[T]>,
    width: usize,
) -> Vec<T> {
    let w = T::of(width as f64);
    let mut out = vec![T::zero(); y.len()];
    for (r, or) in out.chunks_mut(width).enumerate() {
        let span = r * width..(r + 1) * width;
        let yr = &y[span.clone()];
        let gr = &g[span.clone()];
        let inv = inv_std[r];
        let mg = gr.iter().copied().sum::<T>() / w;
        let myg = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum::<T>() / w;
        // d(inv_std) = -inv_std * sigma' / sigma with sigma' = mean(y * x').
        if let Some(x_t) = x_t {
            let xtr = &x_t[span.clone()];
            let sigma_t = yr.iter().zip(xtr).map(|(&a, &b)| a * b).sum::<T>() / w;
            let d_inv = -inv * inv * sigma_t;
            for j in 0..width {
                or[j] += d_inv * (gr[j] - mg - yr[j] * myg);
            }
        }
        if let Some(y_t) = y_t {
            let ytr = &y_t[span.clone()];
            let myt_g = ytr.iter().zip(gr).map(|(&a, &b)| a * b).sum::<T>() / w;
            for j in 0..width {
                or[j] -= inv * (ytr[j] * myg + yr[j] * myt_g);
            }
        }
        if let Some(g_t) = g_t {
            let gtr = &g_t[span.clone()];
            let mgt = gtr.iter().copied().sum::<T>() / w;
            let mygt = yr.iter().zip(gtr).map(|(&a, &b)| a * b).sum::<T>() / w;
            for j in 0..width {
                or[j] += inv * (gtr[j] - mgt - yr[j] * mygt);
            }
        }
    }
    out
}

/// Swaps axes 1 and 2 of a `[a, b, c, d]` tensor, giving `[a, c, b, d]`.
pub(crate) fn swap_axes_12<T: Real>(x: &[T], dims: [usize; 4]) -> Vec<T> {
    let [a, b, c, d] = dims;
    let mut out = vec![T::zero(); x.len()];
    for i in 0..a {
        for j in 0..b {
            for k in 0..c {
                let src = ((i * b + j) * c + k) * d;
                let dst = ((i * c + k) * b + j) * d;
                out[dst..dst + d].copy_from_slice(&x[src..src + d]);
            }
        }
    }
    out
}

/// Sums rows of a `[rows, width]` view into a `[width]` vector.
pub(crate) fn column_sums<T: Real>(x: &[T], width: usize) -> Vec<T> {
    let mut out = vec![T::zero(); width];
    for row in x.chunks(width) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out
}
