//! Dense linear algebra and the differentiation contract.
//!
//! Everything is `f64`. Vectors are plain `Vec<f64>` / `&[f64]`; the helpers
//! below assert on length mismatch instead of silently truncating.

mod diff;
mod matrix;
mod param;

pub use diff::{
    check_gradient, cross_hvp, grad, hvp, perturbation_step, relative_error, FdCheck, Group,
    ScalarFn, DEFAULT_FD_EPS,
};
pub use matrix::Matrix;
pub use param::{Layout, LayoutBuilder, ParamVector, Segment};

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "dot: length mismatch");
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    assert_eq!(x.len(), y.len(), "axpy: length mismatch");
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale(alpha: f64, x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| alpha * v).collect()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    assert_eq!(a.len(), b.len(), "sub: length mismatch");
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    assert_eq!(a.len(), b.len(), "add: length mismatch");
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|v| v.is_finite())
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn logsumexp(z: &[f64]) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `out = W x` for a row-major `rows x cols` block.
#[inline]
pub(crate) fn gemv(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    for (r, o) in out.iter_mut().enumerate().take(rows) {
        *o = dot(&w[r * cols..(r + 1) * cols], x);
    }
}

/// `out += Wᵀ y` for a row-major `rows x cols` block.
#[inline]
pub(crate) fn gemv_t_acc(w: &[f64], rows: usize, cols: usize, y: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    for (r, &yr) in y.iter().enumerate().take(rows) {
        if yr != 0.0 {
            axpy(yr, &w[r * cols..(r + 1) * cols], out);
        }
    }
}

/// `G += scale * y xᵀ`
#[inline]
pub(crate) fn outer_acc(g: &mut [f64], scale: f64, y: &[f64], x: &[f64]) {
    let cols = x.len();
    for (r, &yr) in y.iter().enumerate() {
        let c = scale * yr;
        if c != 0.0 {
            axpy(c, x, &mut g[r * cols..(r + 1) * cols]);
        }
    }
}
