use serde::{Deserialize, Serialize};

use super::{all_finite, norm, ParamVector};
use crate::{Error, Result};

/// Default base step for divided-difference Hessian products.
pub const DEFAULT_FD_EPS: f64 = 1e-3;

/// Which parameter group a derivative is taken against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    /// Inference-network parameters.
    Theta,
    /// Energy parameters.
    Phi,
}

/// A differentiable scalar of `(θ, φ)`. Any data batch is bound into the
/// implementing value.
///
/// Implementations promise that [`ScalarFn::grad`] agrees with central finite
/// differences of [`ScalarFn::value`]; [`check_gradient`] measures this.
pub trait ScalarFn: Sync {
    fn theta_len(&self) -> usize;
    fn phi_len(&self) -> usize;
    fn value(&self, theta: &ParamVector, phi: &ParamVector) -> Result<f64>;
    fn grad(&self, group: Group, theta: &ParamVector, phi: &ParamVector) -> Result<Vec<f64>>;
}

fn check_dims(f: &dyn ScalarFn, theta: &ParamVector, phi: &ParamVector) -> Result<()> {
    if theta.len() != f.theta_len() || phi.len() != f.phi_len() {
        return Err(Error::shape(format!(
            "function expects |θ|={} |φ|={}, got |θ|={} |φ|={}",
            f.theta_len(),
            f.phi_len(),
            theta.len(),
            phi.len()
        )));
    }
    Ok(())
}

/// `∂f/∂group` as a flat vector of the group's length.
pub fn grad(f: &dyn ScalarFn, group: Group, theta: &ParamVector, phi: &ParamVector) -> Result<Vec<f64>> {
    check_dims(f, theta, phi)?;
    let g = f.grad(group, theta, phi)?;
    let want = match group {
        Group::Theta => theta.len(),
        Group::Phi => phi.len(),
    };
    if g.len() != want {
        return Err(Error::shape(format!("gradient has length {}, expected {want}", g.len())));
    }
    Ok(g)
}

/// Perturbation size for direction `v`: `eps0 / max(1, ‖v‖)`.
pub fn perturbation_step(eps0: f64, v: &[f64]) -> f64 {
    eps0 / norm(v).max(1.0)
}

fn validate_direction(v: &[f64], len: usize, eps0: f64) -> Result<()> {
    if v.len() != len {
        return Err(Error::shape(format!("direction has length {}, expected {len}", v.len())));
    }
    if !all_finite(v) {
        return Err(Error::NonFinite("direction vector".into()));
    }
    if eps0.is_nan() || eps0 <= 0.0 {
        return Err(Error::invalid(format!("divided-difference step must be positive, got {eps0}")));
    }
    Ok(())
}

fn central_difference(plus: Vec<f64>, minus: Vec<f64>, eps: f64, what: &str, base_norm: f64, v_norm: f64) -> Result<Vec<f64>> {
    if !all_finite(&plus) || !all_finite(&minus) {
        return Err(Error::NonFinite(format!(
            "{what}: gradient at perturbed point is not finite (step {eps:e}, base norm {base_norm:e}, direction norm {v_norm:e})"
        )));
    }
    let out: Vec<f64> = plus.iter().zip(&minus).map(|(p, m)| (p - m) / (2.0 * eps)).collect();
    if !all_finite(&out) {
        return Err(Error::NonFinite(format!("{what}: divided difference overflowed (step {eps:e})")));
    }
    Ok(out)
}

/// Hessian-vector product `∂²f/∂group² · v` by central differences of gradients:
/// `(∇f(p + εv) − ∇f(p − εv)) / 2ε`.
pub fn hvp(
    f: &dyn ScalarFn,
    group: Group,
    theta: &ParamVector,
    phi: &ParamVector,
    v: &[f64],
    eps0: f64,
) -> Result<Vec<f64>> {
    check_dims(f, theta, phi)?;
    let base = match group {
        Group::Theta => theta,
        Group::Phi => phi,
    };
    validate_direction(v, base.len(), eps0)?;
    let eps = perturbation_step(eps0, v);
    let (plus, minus) = match group {
        Group::Theta => (
            f.grad(group, &theta.offset(eps, v)?, phi)?,
            f.grad(group, &theta.offset(-eps, v)?, phi)?,
        ),
        Group::Phi => (
            f.grad(group, theta, &phi.offset(eps, v)?)?,
            f.grad(group, theta, &phi.offset(-eps, v)?)?,
        ),
    };
    central_difference(plus, minus, eps, "hvp", base.norm(), norm(v))
}

/// Cross-Hessian product `C·w` with `C_ij = ∂²f/∂φ_i∂θ_j`, computed as
/// `(∇_φ f(θ + εw, φ) − ∇_φ f(θ − εw, φ)) / 2ε`. Returns a φ-length vector.
pub fn cross_hvp(f: &dyn ScalarFn, theta: &ParamVector, phi: &ParamVector, w: &[f64], eps0: f64) -> Result<Vec<f64>> {
    check_dims(f, theta, phi)?;
    validate_direction(w, theta.len(), eps0)?;
    let eps = perturbation_step(eps0, w);
    let plus = f.grad(Group::Phi, &theta.offset(eps, w)?, phi)?;
    let minus = f.grad(Group::Phi, &theta.offset(-eps, w)?, phi)?;
    central_difference(plus, minus, eps, "cross_hvp", theta.norm(), norm(w))
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, 1e-8)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = super::sub(a, b);
    norm(&diff) / norm(a).max(norm(b)).max(1e-8)
}

/// Outcome of comparing an analytic gradient with central finite differences.
#[derive(Clone, Debug)]
pub struct FdCheck {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub rel_error: f64,
}

/// Coordinate-wise central finite differences of `f.value` with step `h`,
/// compared against `f.grad`.
pub fn check_gradient(f: &dyn ScalarFn, group: Group, theta: &ParamVector, phi: &ParamVector, h: f64) -> Result<FdCheck> {
    let analytic = grad(f, group, theta, phi)?;
    let n = analytic.len();
    let mut numeric = vec![0.0; n];
    let mut e = vec![0.0; n];
    for i in 0..n {
        e[i] = 1.0;
        let (fp, fm) = match group {
            Group::Theta => (f.value(&theta.offset(h, &e)?, phi)?, f.value(&theta.offset(-h, &e)?, phi)?),
            Group::Phi => (f.value(theta, &phi.offset(h, &e)?)?, f.value(theta, &phi.offset(-h, &e)?)?),
        };
        numeric[i] = (fp - fm) / (2.0 * h);
        e[i] = 0.0;
    }
    let rel_error = relative_error(&analytic, &numeric);
    Ok(FdCheck { analytic, numeric, rel_error })
}
