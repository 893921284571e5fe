//! What the multi-label energy learned about label dependence: the average
//! Hessian of its global term over gold outputs, compared with label
//! co-occurrence counts.

use serde::Serialize;

use crate::data::{cooccurrence, MlcDataset};
use crate::models::{MlcFamily, StructuredFamily};
use crate::tensor::{Matrix, ParamVector};
use crate::{Error, Result};

#[derive(Clone, Debug, Serialize)]
pub struct HessianAnalysis {
    /// Mean of `∂²E/∂y²` at the gold outputs, diagonal zeroed.
    pub hessian: Matrix,
    /// Label co-occurrence counts, diagonal zeroed.
    pub cooccurrence: Matrix,
    /// Pearson correlation between the upper off-diagonal entries of `−H`
    /// and of the co-occurrence matrix; `None` when either is constant.
    pub correlation: Option<f64>,
    /// Largest gap between the analytic mean Hessian and a divided-difference
    /// Hessian of the full energy.
    pub fd_max_abs_error: f64,
}

/// Divided-difference Hessian of `E_φ(x, ·)` at `y` from analytic label gradients.
pub fn energy_hessian_fd(
    family: &MlcFamily,
    phi: &ParamVector,
    x: &crate::data::MlcExample,
    y: &[f64],
    h: f64,
) -> Result<Matrix> {
    let feats = family.features(phi, x)?;
    let l = y.len();
    let grad_at = |y: &[f64]| -> Result<Vec<f64>> {
        let mut g = vec![0.0; l];
        family.energy_backward(phi, &feats, y, 1.0, None, Some(&mut g))?;
        Ok(g)
    };
    let mut out = Matrix::zeros(l, l);
    for j in 0..l {
        let (mut plus, mut minus) = (y.to_vec(), y.to_vec());
        plus[j] += h;
        minus[j] -= h;
        let (gp, gm) = (grad_at(&plus)?, grad_at(&minus)?);
        for i in 0..l {
            out.set(i, j, (gp[i] - gm[i]) / (2.0 * h));
        }
    }
    Ok(out)
}

pub fn analyze_energy_hessian(family: &MlcFamily, phi: &ParamVector, data: &MlcDataset) -> Result<HessianAnalysis> {
    if data.is_empty() {
        return Err(Error::invalid("cannot analyze an empty dataset"));
    }
    let l = family.arch().n_labels;
    if data.n_labels != l {
        return Err(Error::shape(format!("data has {} labels, model has {l}", data.n_labels)));
    }
    let mut sum = vec![0.0; l * l];
    let mut fd_sum = vec![0.0; l * l];
    let fd_step = 1e-4;
    for x in &data.examples {
        let gold = family.gold(x);
        for (s, v) in sum.iter_mut().zip(family.global_energy_hessian(phi, &gold)?) {
            *s += v;
        }
        for (s, v) in fd_sum.iter_mut().zip(energy_hessian_fd(family, phi, x, &gold, fd_step)?.as_slice()) {
            *s += v;
        }
    }
    let n = data.len() as f64;
    let mut fd_max_abs_error: f64 = 0.0;
    for (a, b) in sum.iter_mut().zip(&fd_sum) {
        *a /= n;
        fd_max_abs_error = fd_max_abs_error.max((*a - b / n).abs());
    }
    let mut hessian = Matrix::from_vec(l, l, sum)?;
    for i in 0..l {
        hessian.set(i, i, 0.0);
    }
    let cooc = cooccurrence(data);
    let correlation = offdiag_correlation(&hessian, &cooc, -1.0);
    Ok(HessianAnalysis { hessian, cooccurrence: cooc, correlation, fd_max_abs_error })
}

/// Pearson correlation of `sign · a_ij` against `b_ij` over `i < j`.
pub fn offdiag_correlation(a: &Matrix, b: &Matrix, sign: f64) -> Option<f64> {
    let n = a.rows();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            xs.push(sign * a.get(i, j));
            ys.push(b.get(i, j));
        }
    }
    pearson(&xs, &ys)
}

/// Sample Pearson correlation; `None` for fewer than two points or zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len(), "pearson: length mismatch");
    let n = x.len();
    if n < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}
