//! Self-checks of every derivative the trainer relies on: loss gradients
//! against central differences, Hessian products against known matrices, the
//! von Neumann inverse against a closed form, and the full hypergradient
//! against problems with an exact answer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{gen_synth, MlcExample, SeqExample, SynthSpec};
use crate::implicit::{implicit_grad_phi, neumann_ihvp, HypergradReport, IhvpConfig};
use crate::losses::{AuxLoss, CdLoss, SsvmLoss};
use crate::models::{MlcArch, MlcFamily, SeqArch, SeqFamily, StructuredFamily};
use crate::quadratic::QuadraticBilevel;
use crate::tensor::{check_gradient, cross_hvp, hvp, relative_error, Group, Matrix, ParamVector, ScalarFn};
use crate::Result;

/// Hypergradient engine under test; [`implicit_grad_phi`] in normal use.
pub type HypergradFn =
    dyn Fn(&dyn ScalarFn, &dyn ScalarFn, &ParamVector, &ParamVector, &IhvpConfig) -> Result<HypergradReport>;

const FD_STEP: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;
const EXACT_TOL: f64 = 1e-6;
const HYPERGRAD_TOL: f64 = 1e-3;

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    /// Relative error of the check (see each check for the reference).
    pub error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{verdict} {:<28} rel_error={:.3e} tol={:.1e}", self.name, self.error, self.tolerance)
    }
}

/// `Σ_x E_φ(x, A_θ(x))`: exercises the label and parameter gradients of the
/// energy together with the inference backward pass.
struct EnergyAtInference<'a, F: StructuredFamily> {
    family: &'a F,
    batch: Vec<&'a F::Example>,
}

impl<F: StructuredFamily> ScalarFn for EnergyAtInference<'_, F> {
    fn theta_len(&self) -> usize {
        self.family.theta_layout().len()
    }

    fn phi_len(&self) -> usize {
        self.family.phi_layout().len()
    }

    fn value(&self, theta: &ParamVector, phi: &ParamVector) -> Result<f64> {
        let mut total = 0.0;
        for x in &self.batch {
            let (yhat, _) = self.family.infer(theta, x)?;
            total += self.family.energy(phi, &self.family.features(phi, x)?, &yhat)?;
        }
        Ok(total)
    }

    fn grad(&self, group: Group, theta: &ParamVector, phi: &ParamVector) -> Result<Vec<f64>> {
        let mut g = vec![0.0; if group == Group::Theta { theta.len() } else { phi.len() }];
        for x in &self.batch {
            let (yhat, trace) = self.family.infer(theta, x)?;
            let feats = self.family.features(phi, x)?;
            match group {
                Group::Theta => {
                    let mut gy = vec![0.0; yhat.len()];
                    self.family.energy_backward(phi, &feats, &yhat, 1.0, None, Some(&mut gy))?;
                    self.family.infer_backward(theta, &trace, &gy, &mut g);
                }
                Group::Phi => {
                    self.family.energy_backward(phi, &feats, &yhat, 1.0, Some(&mut g), None)?;
                }
            }
        }
        Ok(g)
    }
}

/// `½θᵀAθ + θᵀCφ` with `A` symmetric positive definite.
struct KnownQuadratic {
    a: Matrix,
    c: Matrix,
}

impl ScalarFn for KnownQuadratic {
    fn theta_len(&self) -> usize {
        self.a.rows()
    }

    fn phi_len(&self) -> usize {
        self.c.cols()
    }

    fn value(&self, theta: &ParamVector, phi: &ParamVector) -> Result<f64> {
        let t = theta.as_slice();
        let at = self.a.matvec(t)?;
        let cp = self.c.matvec(phi.as_slice())?;
        Ok(t.iter().zip(&at).map(|(x, y)| 0.5 * x * y).sum::<f64>() + t.iter().zip(&cp).map(|(x, y)| x * y).sum::<f64>())
    }

    fn grad(&self, group: Group, theta: &ParamVector, phi: &ParamVector) -> Result<Vec<f64>> {
        match group {
            Group::Theta => {
                let at = self.a.matvec(theta.as_slice())?;
                let cp = self.c.matvec(phi.as_slice())?;
                Ok(at.iter().zip(&cp).map(|(x, y)| x + y).collect())
            }
            Group::Phi => self.c.tr_matvec(theta.as_slice()),
        }
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, random_vec(rng, rows * cols)).expect("sizes match")
}

struct Suite {
    tol_override: Option<f64>,
    results: Vec<CheckResult>,
}

impl Suite {
    fn record(&mut self, name: impl Into<String>, error: f64, default_tol: f64) {
        let tolerance = self.tol_override.unwrap_or(default_tol);
        // A NaN error compares false and fails.
        let passed = error <= tolerance;
        self.results.push(CheckResult { name: name.into(), error, tolerance, passed });
    }

    fn gradients(&mut self, prefix: &str, f: &dyn ScalarFn, theta: &ParamVector, phi: &ParamVector) -> Result<()> {
        let t = check_gradient(f, Group::Theta, theta, phi, FD_STEP)?;
        self.record(format!("{prefix}.theta"), t.rel_error, GRAD_TOL);
        let p = check_gradient(f, Group::Phi, theta, phi, FD_STEP)?;
        self.record(format!("{prefix}.phi"), p.rel_error, GRAD_TOL);
        Ok(())
    }

    fn family_checks<F: StructuredFamily>(&mut self, tag: &str, fam: &F, data: &[F::Example], seed: u64) -> Result<()> {
        let (theta, phi) = fam.init_params(seed);
        let batch: Vec<&F::Example> = data.iter().collect();
        self.gradients(&format!("{tag}.likelihood"), &AuxLoss::new(fam, batch.clone(), 0.0), &theta, &phi)?;
        self.gradients(&format!("{tag}.aux"), &AuxLoss::new(fam, batch.clone(), 0.7), &theta, &phi)?;
        self.gradients(&format!("{tag}.energy"), &EnergyAtInference { family: fam, batch: batch.clone() }, &theta, &phi)?;
        self.gradients(&format!("{tag}.ssvm"), &SsvmLoss::new(fam, batch.clone(), 0.5), &theta, &phi)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cd = CdLoss::new(fam, batch, 3, 0.5, &mut rng)?;
        self.gradients(&format!("{tag}.cd"), &cd, &theta, &phi)?;
        Ok(())
    }
}

fn mlc_fixture() -> Result<(MlcFamily, Vec<MlcExample>)> {
    let fam = MlcFamily::new(MlcArch {
        n_features: 5,
        n_labels: 4,
        infer_hidden: vec![3],
        feature_hidden: vec![3],
        feature_dim: 3,
        global_hidden: 3,
    })?;
    let data = gen_synth(&SynthSpec::planted(4, 5, 6, 11))?;
    Ok((fam, data.examples))
}

fn seq_fixture() -> Result<(SeqFamily, Vec<SeqExample>)> {
    let fam = SeqFamily::new(SeqArch {
        vocab_size: 7,
        n_tags: 3,
        embed_dim: 2,
        infer_hidden: vec![3],
        feature_hidden: vec![3],
        feature_dim: 2,
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let data = [1usize, 3, 4]
        .iter()
        .map(|&t| SeqExample {
            tokens: (0..t).map(|_| rng.random_range(0..7)).collect(),
            tags: (0..t).map(|_| rng.random_range(0..3)).collect(),
            extra: vec![Vec::new(); t],
        })
        .collect();
    Ok((fam, data))
}

/// Runs every check. `tol_override` replaces each check's own tolerance.
pub fn run_suite(tol_override: Option<f64>, hypergrad: &HypergradFn) -> Result<Vec<CheckResult>> {
    let mut suite = Suite { tol_override, results: Vec::new() };

    let (mlc, mlc_data) = mlc_fixture()?;
    suite.family_checks("mlc", &mlc, &mlc_data, 3)?;
    let (seq, seq_data) = seq_fixture()?;
    suite.family_checks("seq", &seq, &seq_data, 4)?;

    // Hessian products against a quadratic with known second derivatives.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (n, m) = (4, 3);
    let b = random_matrix(&mut rng, n, n);
    let mut a = b.transpose().matmul(&b)?;
    for i in 0..n {
        a.set(i, i, a.get(i, i) + 1.0);
    }
    let q = KnownQuadratic { a, c: random_matrix(&mut rng, n, m) };
    let theta = ParamVector::unstructured(random_vec(&mut rng, n));
    let phi = ParamVector::unstructured(random_vec(&mut rng, m));
    let v = random_vec(&mut rng, n);
    let got = hvp(&q, Group::Theta, &theta, &phi, &v, 1e-3)?;
    suite.record("hvp.quadratic", relative_error(&got, &q.a.matvec(&v)?), EXACT_TOL);
    let got = cross_hvp(&q, &theta, &phi, &v, 1e-3)?;
    suite.record("cross_hvp.quadratic", relative_error(&got, &q.c.tr_matvec(&v)?), EXACT_TOL);

    // Von Neumann inverse of diag(2, 4) applied to (1, 1).
    let cfg = IhvpConfig { k: 60, alpha: 0.2, delta: 0.0, ..Default::default() };
    let diag = Matrix::diag(&[2.0, 4.0]);
    let w = neumann_ihvp(&mut |p: &[f64]| diag.matvec(p), &[1.0, 1.0], &cfg)?;
    suite.record("neumann.diagonal", relative_error(&w, &[0.5, 0.25]), EXACT_TOL);

    // Hypergradients with exact answers M^T M φ.
    let cfg = IhvpConfig { k: 50, alpha: 0.5, delta: 0.0, ..Default::default() };
    let fixed = QuadraticBilevel::new(Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]])?);
    let random = QuadraticBilevel::new(random_matrix(&mut rng, 3, 4));
    for (name, problem, phi) in [
        ("hypergrad.quadratic_2x2", &fixed, vec![1.0, 1.0]),
        ("hypergrad.quadratic_3x4", &random, random_vec(&mut rng, 4)),
    ] {
        let theta = ParamVector::unstructured(problem.inner_optimum(&phi)?);
        let phi_p = ParamVector::unstructured(phi.clone());
        let report = hypergrad(&problem.prim(), &problem.aux(), &theta, &phi_p, &cfg)?;
        suite.record(name, relative_error(&report.total, &problem.exact_hypergradient(&phi)?), HYPERGRAD_TOL);
    }

    Ok(suite.results)
}

/// The suite with the production hypergradient engine.
pub fn run_default(tol_override: Option<f64>) -> Result<Vec<CheckResult>> {
    run_suite(tol_override, &implicit_grad_phi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        let results = run_default(None).unwrap();
        for r in &results {
            assert!(r.passed, "{r}");
        }
        assert!(results.len() >= 20);
    }

    #[test]
    fn flipped_implicit_sign_is_caught() {
        let flipped = |p: &dyn ScalarFn, a: &dyn ScalarFn, t: &ParamVector, f: &ParamVector, c: &IhvpConfig| {
            let mut r = implicit_grad_phi(p, a, t, f, c)?;
            r.total = r.explicit.iter().zip(&r.implicit).map(|(e, i)| e + i).collect();
            Ok(r)
        };
        let results = run_suite(None, &flipped).unwrap();
        let failed: Vec<_> = results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
        assert!(failed.contains(&"hypergrad.quadratic_2x2"), "{failed:?}");
    }

    #[test]
    fn zero_tolerance_fails_inexact_checks() {
        let results = run_default(Some(0.0)).unwrap();
        assert!(results.iter().any(|r| !r.passed));
    }
}
