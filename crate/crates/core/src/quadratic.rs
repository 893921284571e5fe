//! A bi-level problem with a closed-form hypergradient, used to validate the
//! implicit-gradient engine and the trainer loop.
//!
//! `L_Aux(θ, φ) = ½‖θ − Mφ‖²` and `L_Prim(θ, φ) = ½‖θ‖²`, so `θ*(φ) = Mφ`
//! and `dL_Prim(θ*(φ))/dφ = MᵀMφ` while `∂_φ L_Prim = 0`.

use rand::RngCore;

use crate::losses::{PrimaryLoss, Scores};
use crate::tensor::{Group, Matrix, ParamVector, ScalarFn};
use crate::trainer::BilevelProblem;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticBilevel {
    m: Matrix,
    phi0: Vec<f64>,
}

impl QuadraticBilevel {
    /// `m` maps φ (its columns) to the inner optimum θ (its rows). Training
    /// starts from θ = 0 and φ = 1.
    pub fn new(m: Matrix) -> Self {
        let phi0 = vec![1.0; m.cols()];
        QuadraticBilevel { m, phi0 }
    }

    pub fn with_initial_phi(mut self, phi0: Vec<f64>) -> Result<Self> {
        if phi0.len() != self.m.cols() {
            return Err(Error::shape("initial φ length does not match the columns of M"));
        }
        self.phi0 = phi0;
        Ok(self)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.m
    }

    pub fn theta_len(&self) -> usize {
        self.m.rows()
    }

    pub fn phi_len(&self) -> usize {
        self.m.cols()
    }

    pub fn aux(&self) -> QuadraticAux<'_> {
        QuadraticAux { m: &self.m }
    }

    pub fn prim(&self) -> QuadraticPrim {
        QuadraticPrim { theta_len: self.m.rows(), phi_len: self.m.cols() }
    }

    /// `θ*(φ) = Mφ`
    pub fn inner_optimum(&self, phi: &[f64]) -> Result<Vec<f64>> {
        self.m.matvec(phi)
    }

    /// `MᵀMφ`
    pub fn exact_hypergradient(&self, phi: &[f64]) -> Result<Vec<f64>> {
        self.m.tr_matvec(&self.m.matvec(phi)?)
    }
}

/// Batches carry no data; the primary-loss variant is ignored.
impl BilevelProblem for QuadraticBilevel {
    type Example = ();

    fn init_params(&self, _seed: u64) -> (ParamVector, ParamVector) {
        (ParamVector::unstructured(vec![0.0; self.m.rows()]), ParamVector::unstructured(self.phi0.clone()))
    }

    fn aux_loss<'a>(&'a self, _batch: Vec<&'a ()>, _lambda: f64) -> Box<dyn ScalarFn + 'a> {
        Box::new(self.aux())
    }

    fn prim_loss<'a>(
        &'a self,
        _batch: Vec<&'a ()>,
        _primary: &PrimaryLoss,
        _rng: &mut dyn RngCore,
    ) -> Result<Box<dyn ScalarFn + 'a>> {
        Ok(Box::new(self.prim()))
    }

    fn evaluate(&self, _theta: &ParamVector, _data: &[()]) -> Result<Scores> {
        Ok(Scores::Unscored)
    }
}

/// `½‖θ − Mφ‖²`
pub struct QuadraticAux<'a> {
    m: &'a Matrix,
}

impl QuadraticAux<'_> {
    fn residual(&self, theta: &ParamVector, phi: &ParamVector) -> Result<Vec<f64>> {
        let mphi = self.m.matvec(phi.as_slice())?;
        if mphi.len() != theta.len() {
            return Err(Error::shape("θ length does not match the rows of M"));
        }
        Ok(theta.as_slice().iter().zip(mphi).map(|(t, m)| t - m).collect())
    }
}

impl ScalarFn for QuadraticAux<'_> {
    fn theta_len(&self) -> usize {
        self.m.rows()
    }

    fn phi_len(&self) -> usize {
        self.m.cols()
    }

    fn value(&self, theta: &ParamVector, phi: &ParamVector) -> Result<f64> {
        let r = self.residual(theta, phi)?;
        Ok(0.5 * r.iter().map(|v| v * v).sum::<f64>())
    }

    fn grad(&self, group: Group, theta: &ParamVector, phi: &ParamVector) -> Result<Vec<f64>> {
        let r = self.residual(theta, phi)?;
        match group {
            Group::Theta => Ok(r),
            Group::Phi => Ok(self.m.tr_matvec(&r)?.into_iter().map(|v| -v).collect()),
        }
    }
}

/// `½‖θ‖²`
pub struct QuadraticPrim {
    theta_len: usize,
    phi_len: usize,
}

impl ScalarFn for QuadraticPrim {
    fn theta_len(&self) -> usize {
        self.theta_len
    }

    fn phi_len(&self) -> usize {
        self.phi_len
    }

    fn value(&self, theta: &ParamVector, _phi: &ParamVector) -> Result<f64> {
        Ok(0.5 * theta.as_slice().iter().map(|v| v * v).sum::<f64>())
    }

    fn grad(&self, group: Group, theta: &ParamVector, _phi: &ParamVector) -> Result<Vec<f64>> {
        match group {
            Group::Theta => Ok(theta.flatten()),
            Group::Phi => Ok(vec![0.0; self.phi_len]),
        }
    }
}
