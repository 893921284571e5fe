//! Hypergradients of the primary loss through the inner optimum.
//!
//! With `θ*(φ) = argmin_θ L_Aux(θ, φ)` the total derivative is
//!
//! ```text
//! dL_Prim/dφ = ∂_φ L_Prim − (∂_φ∂_θ L_Aux) (∂_θ∂_θ L_Aux)⁻¹ ∂_θ L_Prim
//! ```
//!
//! The inverse-Hessian product is a truncated von Neumann series over
//! finite-difference Hessian products, so only gradients are ever needed.

use serde::{Deserialize, Serialize};

use crate::tensor::{all_finite, cross_hvp, grad, hvp, norm, sub, Group, ParamVector, ScalarFn, DEFAULT_FD_EPS};
use crate::{Error, Result};

/// Settings for the truncated von Neumann inverse.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IhvpConfig {
    /// Series terms beyond the zeroth; also the number of Hessian products.
    pub k: usize,
    /// Preconditioning scale. The series converges when `α·λ_max(H + δI) < 2`.
    pub alpha: f64,
    /// Damping added to the Hessian inside each product.
    pub delta: f64,
    /// Base step of the divided-difference Hessian products.
    #[serde(default = "default_fd_eps")]
    pub fd_eps: f64,
}

fn default_fd_eps() -> f64 {
    DEFAULT_FD_EPS
}

impl Default for IhvpConfig {
    fn default() -> Self {
        IhvpConfig { k: 5, alpha: 0.1, delta: 1e-3, fd_eps: DEFAULT_FD_EPS }
    }
}

impl IhvpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::invalid(format!("delta must be non-negative, got {}", self.delta)));
        }
        if !(self.fd_eps > 0.0 && self.fd_eps.is_finite()) {
            return Err(Error::invalid(format!("fd_eps must be positive, got {}", self.fd_eps)));
        }
        Ok(())
    }
}

/// `H⁻¹g ≈ α Σ_{i=0}^{K} (I − α(H + δI))^i g`, calling `hvp_fn` exactly `K` times.
pub fn neumann_ihvp(
    hvp_fn: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    g: &[f64],
    cfg: &IhvpConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if !all_finite(g) {
        return Err(Error::NonFinite("right-hand side of the inverse-Hessian product".into()));
    }
    let mut p = g.to_vec();
    let mut acc = g.to_vec();
    for term in 1..=cfg.k {
        let hp = hvp_fn(&p)?;
        if hp.len() != p.len() {
            return Err(Error::shape(format!("Hessian product has length {}, expected {}", hp.len(), p.len())));
        }
        for (pi, hi) in p.iter_mut().zip(&hp) {
            *pi -= cfg.alpha * hi + cfg.alpha * cfg.delta * *pi;
        }
        for (a, pi) in acc.iter_mut().zip(&p) {
            *a += pi;
        }
        if !all_finite(&p) || !all_finite(&acc) {
            return Err(Error::Divergence { term, norm: norm(&p) });
        }
    }
    acc.iter_mut().for_each(|a| *a *= cfg.alpha);
    Ok(acc)
}

/// The pieces of one hypergradient evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypergradReport {
    /// `∂_φ L_Prim`
    pub explicit: Vec<f64>,
    /// `C·w` with `w ≈ H⁻¹ ∂_θ L_Prim`
    pub implicit: Vec<f64>,
    /// `explicit − implicit`
    pub total: Vec<f64>,
    /// `‖H w − ∂_θ L_Prim‖` with the undamped Hessian.
    pub ihvp_residual: f64,
    /// Hessian products spent inside the series.
    pub hvp_calls: usize,
    /// `‖∂_θ L_Aux(θ, φ)‖`, zero at an exact inner optimum.
    pub aux_grad_norm: f64,
}

/// Total derivative of `l_prim` with respect to φ through `θ*`, evaluated at
/// the supplied `theta` (taken as the inner optimum, not re-checked).
pub fn implicit_grad_phi(
    l_prim: &dyn ScalarFn,
    l_aux: &dyn ScalarFn,
    theta: &ParamVector,
    phi: &ParamVector,
    cfg: &IhvpConfig,
) -> Result<HypergradReport> {
    cfg.validate()?;
    let explicit = grad(l_prim, Group::Phi, theta, phi)?;
    let g = grad(l_prim, Group::Theta, theta, phi)?;
    let aux_grad_norm = norm(&grad(l_aux, Group::Theta, theta, phi)?);

    let mut calls = 0;
    let mut h = |v: &[f64]| {
        calls += 1;
        hvp(l_aux, Group::Theta, theta, phi, v, cfg.fd_eps)
    };
    let w = neumann_ihvp(&mut h, &g, cfg)?;
    let hvp_calls = calls;

    let hw = hvp(l_aux, Group::Theta, theta, phi, &w, cfg.fd_eps)?;
    let ihvp_residual = norm(&sub(&hw, &g));
    let implicit = cross_hvp(l_aux, theta, phi, &w, cfg.fd_eps)?;
    let total = sub(&explicit, &implicit);
    if !all_finite(&total) {
        return Err(Error::NonFinite("hypergradient".into()));
    }
    Ok(HypergradReport { explicit, implicit, total, ihvp_residual, hvp_calls, aux_grad_norm })
}

/// Only the explicit term `∂_φ L_Prim`, ignoring how θ depends on φ.
pub fn biased_grad_phi(l_prim: &dyn ScalarFn, theta: &ParamVector, phi: &ParamVector) -> Result<Vec<f64>> {
    grad(l_prim, Group::Phi, theta, phi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag_hvp(h: Vec<f64>) -> impl FnMut(&[f64]) -> Result<Vec<f64>> {
        move |v: &[f64]| Ok(v.iter().zip(&h).map(|(a, b)| a * b).collect())
    }

    #[test]
    fn identity_hessian_is_exact() {
        let cfg = IhvpConfig { k: 7, alpha: 1.0, delta: 0.0, ..Default::default() };
        let g = [0.3, -2.0, 5.0];
        assert_eq!(neumann_ihvp(&mut diag_hvp(vec![1.0; 3]), &g, &cfg).unwrap(), g.to_vec());
        assert_eq!(neumann_ihvp(&mut diag_hvp(vec![1.0; 3]), &[0.0; 3], &cfg).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn geometric_series_closed_form() {
        for k in [0, 1, 5, 50] {
            let cfg = IhvpConfig { k, alpha: 0.1, delta: 0.0, ..Default::default() };
            let mut calls = 0;
            let mut f = |v: &[f64]| {
                calls += 1;
                Ok(vec![2.0 * v[0], 4.0 * v[1]])
            };
            let w = neumann_ihvp(&mut f, &[1.0, 1.0], &cfg).unwrap();
            assert_eq!(calls, k);
            for (wj, hj) in w.iter().zip([2.0, 4.0]) {
                let exact = (1.0 - (1.0f64 - 0.1 * hj).powi(k as i32 + 1)) / hj;
                assert!((wj - exact).abs() < 1e-12);
            }
            if k == 50 {
                assert!((w[0] - 0.5).abs() < 1e-3 && (w[1] - 0.25).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn divergence_is_reported() {
        let cfg = IhvpConfig { k: 2000, alpha: 1.0, delta: 0.0, ..Default::default() };
        match neumann_ihvp(&mut diag_hvp(vec![10.0]), &[1.0], &cfg) {
            Err(e @ Error::Divergence { .. }) => assert!(e.to_string().contains("smaller")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_config() {
        let cfg = IhvpConfig { alpha: 0.0, ..Default::default() };
        assert!(neumann_ihvp(&mut diag_hvp(vec![1.0]), &[1.0], &cfg).is_err());
        let cfg = IhvpConfig { delta: -1.0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
