use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::models::StructuredFamily;
use crate::tensor::{logsumexp, softmax, Group, ParamVector, ScalarFn};
use crate::{Error, Result};

/// Which primary loss drives the energy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PrimaryLoss {
    /// Margin loss with the inference output as the violating label, plus an
    /// optional ranking term weighted by `lambda_rank`.
    Ssvm {
        #[serde(default)]
        lambda_rank: f64,
    },
    /// Cost-augmented contrastive divergence with `negatives` samples from
    /// `A_θ(x)`, relaxed at `temperature` (0 gives hard samples).
    Cd { negatives: usize, temperature: f64 },
}

impl PrimaryLoss {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PrimaryLoss::Ssvm { lambda_rank } if !(lambda_rank >= 0.0 && lambda_rank.is_finite()) => {
                Err(Error::invalid("lambda_rank must be finite and non-negative"))
            }
            PrimaryLoss::Cd { negatives: 0, .. } => Err(Error::NoNegatives),
            PrimaryLoss::Cd { temperature, .. } if !(temperature >= 0.0 && temperature.is_finite()) => {
                Err(Error::invalid("temperature must be finite and non-negative"))
            }
            _ => Ok(()),
        }
    }

    /// Binds the loss to a batch. CD draws its sample noise here, so the
    /// returned function is deterministic in `(θ, φ)`.
    pub fn bind<'a, F: StructuredFamily>(
        &self,
        family: &'a F,
        batch: Vec<&'a F::Example>,
        rng: &mut dyn RngCore,
    ) -> Result<Box<dyn ScalarFn + 'a>> {
        self.validate()?;
        Ok(match *self {
            PrimaryLoss::Ssvm { lambda_rank } => Box::new(SsvmLoss::new(family, batch, lambda_rank)),
            PrimaryLoss::Cd { negatives, temperature } => {
                Box::new(CdLoss::new(family, batch, negatives, temperature, rng)?)
            }
        })
    }
}

/// `[cost − E(ȳ) + E(y)]₊ + λ_rank·[−E(ȳ) + E(y)]₊`
pub fn ssvm_margin(cost: f64, e_pred: f64, e_gold: f64, lambda_rank: f64) -> f64 {
    (cost - e_pred + e_gold).max(0.0) + lambda_rank * (e_gold - e_pred).max(0.0)
}

/// `logsumexp(−E(y), −E(ȳ_1) + s_1, …) + E(y)` from precomputed energies
/// and costs `(E(ȳ_k), s_k)`.
pub fn cd_from_terms(e_gold: f64, negatives: &[(f64, f64)]) -> Result<f64> {
    if negatives.is_empty() {
        return Err(Error::NoNegatives);
    }
    let z: Vec<f64> = std::iter::once(-e_gold).chain(negatives.iter().map(|&(e, s)| -e + s)).collect();
    Ok(logsumexp(&z) + e_gold)
}

/// `L_MLE(y, A_θ(x)) + λ E_φ(x, A_θ(x))` for one example.
pub fn aux_loss<F: StructuredFamily>(
    family: &F,
    theta: &ParamVector,
    phi: &ParamVector,
    x: &F::Example,
    lambda: f64,
) -> Result<f64> {
    aux_example(family, theta, phi, x, lambda, None, None)
}

/// Margin loss for one example.
pub fn ssvm_prim<F: StructuredFamily>(
    family: &F,
    theta: &ParamVector,
    phi: &ParamVector,
    x: &F::Example,
    lambda_rank: f64,
) -> Result<f64> {
    ssvm_example(family, theta, phi, x, lambda_rank, None, None)
}

/// Contrastive-divergence loss for one example with `k` hard samples drawn from `rng`.
pub fn cd_prim<F: StructuredFamily>(
    family: &F,
    theta: &ParamVector,
    phi: &ParamVector,
    x: &F::Example,
    k: usize,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::NoNegatives);
    }
    let gold = family.gold(x);
    let noise: Vec<Vec<f64>> = (0..k).map(|_| family.draw_noise(&gold, rng)).collect();
    cd_example(family, theta, phi, x, &noise, 0.0, None, None)
}

fn aux_example<F: StructuredFamily>(
    family: &F,
    theta: &ParamVector,
    phi: &ParamVector,
    x: &F::Example,
    lambda: f64,
    grad_theta: Option<&mut [f64]>,
    grad_phi: Option<&mut [f64]>,
) -> Result<f64> {
    let (yhat, trace) = family.infer(theta, x)?;
    let gold = family.gold(x);
    let mut d_yhat = grad_theta.as_ref().map(|_| vec![0.0; yhat.len()]);
    let mle = family.likelihood_loss(&gold, &yhat, d_yhat.as_deref_mut())?;
    let mut value = mle;
    if lambda != 0.0 {
        let feats = family.features(phi, x)?;
        value += lambda * family.energy_backward(phi, &feats, &yhat, lambda, grad_phi, d_yhat.as_deref_mut())?;
    }
    if let (Some(g), Some(d)) = (grad_theta, d_yhat) {
        family.infer_backward(theta, &trace, &d, g);
    }
    Ok(value)
}

fn ssvm_example<F: StructuredFamily>(
    family: &F,
    theta: &ParamVector,
    phi: &ParamVector,
    x: &F::Example,
    lambda_rank: f64,
    grad_theta: Option<&mut [f64]>,
    mut grad_phi: Option<&mut [f64]>,
) -> Result<f64> {
    let (yhat, trace) = family.infer(theta, x)?;
    let gold = family.gold(x);
    let feats = family.features(phi, x)?;
    let cost_fn = family.task_cost();
    let mut d_cost = vec![0.0; yhat.len()];
    let cost = cost_fn.soft(&yhat, &gold, Some(&mut d_cost))?;
    let e_pred = family.energy(phi, &feats, &yhat)?;
    let e_gold = family.energy(phi, &feats, &gold)?;
    let value = ssvm_margin(cost, e_pred, e_gold, lambda_rank);
    if grad_theta.is_none() && grad_phi.is_none() {
        return Ok(value);
    }

    let margin_on = if cost - e_pred + e_gold > 0.0 { 1.0 } else { 0.0 };
    let rank_on = if e_gold - e_pred > 0.0 { lambda_rank } else { 0.0 };
    let w = margin_on + rank_on;
    let mut d_yhat = vec![0.0; yhat.len()];
    if w != 0.0 {
        family.energy_backward(phi, &feats, &yhat, -w, grad_phi.as_deref_mut(), Some(&mut d_yhat))?;
        family.energy_backward(phi, &feats, &gold, w, grad_phi, None)?;
    }
    for (d, c) in d_yhat.iter_mut().zip(&d_cost) {
        *d += margin_on * c;
    }
    if let Some(g) = grad_theta {
        family.infer_backward(theta, &trace, &d_yhat, g);
    }
    Ok(value)
}

#[allow(clippy::too_many_arguments)]
fn cd_example<F: StructuredFamily>(
    family: &F,
    theta: &ParamVector,
    phi: &ParamVector,
    x: &F::Example,
    noise: &[Vec<f64>],
    tau: f64,
    grad_theta: Option<&mut [f64]>,
    mut grad_phi: Option<&mut [f64]>,
) -> Result<f64> {
    let (yhat, trace) = family.infer(theta, x)?;
    let gold = family.gold(x);
    let feats = family.features(phi, x)?;
    let cost_fn = family.task_cost();

    let samples: Vec<Vec<f64>> = noise.iter().map(|n| family.relaxed_sample(&yhat, n, tau)).collect();
    let e_gold = family.energy(phi, &feats, &gold)?;
    let mut z = Vec::with_capacity(samples.len() + 1);
    z.push(-e_gold);
    for s in &samples {
        z.push(-family.energy(phi, &feats, s)? + cost_fn.soft(s, &gold, None)?);
    }
    let value = logsumexp(&z) + e_gold;
    if grad_theta.is_none() && grad_phi.is_none() {
        return Ok(value);
    }

    let w = softmax(&z);
    family.energy_backward(phi, &feats, &gold, 1.0 - w[0], grad_phi.as_deref_mut(), None)?;
    let mut d_yhat = vec![0.0; yhat.len()];
    for (k, (s, n)) in samples.iter().zip(noise).enumerate() {
        let wk = w[k + 1];
        let mut d_sample = vec![0.0; s.len()];
        family.energy_backward(phi, &feats, s, -wk, grad_phi.as_deref_mut(), Some(&mut d_sample))?;
        if grad_theta.is_some() && tau > 0.0 {
            let mut d_cost = vec![0.0; s.len()];
            cost_fn.soft(s, &gold, Some(&mut d_cost))?;
            for (d, c) in d_sample.iter_mut().zip(&d_cost) {
                *d += wk * c;
            }
            for (d, g) in d_yhat.iter_mut().zip(family.relaxed_sample_backward(&yhat, n, tau, &d_sample)) {
                *d += g;
            }
        }
    }
    if let Some(g) = grad_theta {
        family.infer_backward(theta, &trace, &d_yhat, g);
    }
    Ok(value)
}

type ExampleFn<'f> =
    dyn Fn(usize, Option<&mut [f64]>, Option<&mut [f64]>) -> Result<f64> + Sync + 'f;

/// Mean of per-example terms. Examples run in parallel; results are
/// combined in batch order so the sum does not depend on the thread count.
fn batch_mean(n: usize, want: Option<(Group, usize)>, f: &ExampleFn<'_>) -> Result<(f64, Vec<f64>)> {
    if n == 0 {
        return Err(Error::invalid("empty batch"));
    }
    let parts: Vec<Result<(f64, Vec<f64>)>> = (0..n)
        .into_par_iter()
        .map(|i| match want {
            None => f(i, None, None).map(|v| (v, Vec::new())),
            Some((group, len)) => {
                let mut g = vec![0.0; len];
                let v = match group {
                    Group::Theta => f(i, Some(&mut g), None)?,
                    Group::Phi => f(i, None, Some(&mut g))?,
                };
                Ok((v, g))
            }
        })
        .collect();
    let mut total = 0.0;
    let mut grad = vec![0.0; want.map_or(0, |(_, len)| len)];
    for part in parts {
        let (v, g) = part?;
        total += v;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    let inv = 1.0 / n as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    Ok((total * inv, grad))
}

fn group_len(group: Group, theta: &ParamVector, phi: &ParamVector) -> usize {
    match group {
        Group::Theta => theta.len(),
        Group::Phi => phi.len(),
    }
}

/// Batch mean of [`aux_loss`]. With `lambda = 0` this is the plain
/// likelihood loss used by the MBCE baseline.
pub struct AuxLoss<'a, F: StructuredFamily> {
    family: &'a F,
    batch: Vec<&'a F::Example>,
    lambda: f64,
}

impl<'a, F: StructuredFamily> AuxLoss<'a, F> {
    pub fn new(family: &'a F, batch: Vec<&'a F::Example>, lambda: f64) -> Self {
        AuxLoss { family, batch, lambda }
    }
}

impl<F: StructuredFamily> ScalarFn for AuxLoss<'_, F> {
    fn theta_len(&self) -> usize {
        self.family.theta_layout().len()
    }

    fn phi_len(&self) -> usize {
        self.family.phi_layout().len()
    }

    fn value(&self, theta: &ParamVector, phi: &ParamVector) -> Result<f64> {
        let f = |i: usize, gt: Option<&mut [f64]>, gp: Option<&mut [f64]>| {
            aux_example(self.family, theta, phi, self.batch[i], self.lambda, gt, gp)
        };
        Ok(batch_mean(self.batch.len(), None, &f)?.0)
    }

    fn grad(&self, group: Group, theta: &ParamVector, phi: &ParamVector) -> Result<Vec<f64>> {
        let f = |i: usize, gt: Option<&mut [f64]>, gp: Option<&mut [f64]>| {
            aux_example(self.family, theta, phi, self.batch[i], self.lambda, gt, gp)
        };
        Ok(batch_mean(self.batch.len(), Some((group, group_len(group, theta, phi))), &f)?.1)
    }
}

/// Batch mean of [`ssvm_prim`].
pub struct SsvmLoss<'a, F: StructuredFamily> {
    family: &'a F,
    batch: Vec<&'a F::Example>,
    lambda_rank: f64,
}

impl<'a, F: StructuredFamily> SsvmLoss<'a, F> {
    pub fn new(family: &'a F, batch: Vec<&'a F::Example>, lambda_rank: f64) -> Self {
        SsvmLoss { family, batch, lambda_rank }
    }
}

impl<F: StructuredFamily> ScalarFn for SsvmLoss<'_, F> {
    fn theta_len(&self) -> usize {
        self.family.theta_layout().len()
    }

    fn phi_len(&self) -> usize {
        self.family.phi_layout().len()
    }

    fn value(&self, theta: &ParamVector, phi: &ParamVector) -> Result<f64> {
        let f = |i: usize, gt: Option<&mut [f64]>, gp: Option<&mut [f64]>| {
            ssvm_example(self.family, theta, phi, self.batch[i], self.lambda_rank, gt, gp)
        };
        Ok(batch_mean(self.batch.len(), None, &f)?.0)
    }

    fn grad(&self, group: Group, theta: &ParamVector, phi: &ParamVector) -> Result<Vec<f64>> {
        let f = |i: usize, gt: Option<&mut [f64]>, gp: Option<&mut [f64]>| {
            ssvm_example(self.family, theta, phi, self.batch[i], self.lambda_rank, gt, gp)
        };
        Ok(batch_mean(self.batch.len(), Some((group, group_len(group, theta, phi))), &f)?.1)
    }
}

/// Batch mean of the contrastive-divergence loss. Sample noise is fixed at
/// construction, so negatives move with θ through the relaxation instead of
/// being redrawn.
pub struct CdLoss<'a, F: StructuredFamily> {
    family: &'a F,
    batch: Vec<&'a F::Example>,
    noise: Vec<Vec<Vec<f64>>>,
    temperature: f64,
}

impl<'a, F: StructuredFamily> CdLoss<'a, F> {
    pub fn new(
        family: &'a F,
        batch: Vec<&'a F::Example>,
        negatives: usize,
        temperature: f64,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        if negatives == 0 {
            return Err(Error::NoNegatives);
        }
        let noise = batch
            .iter()
            .map(|x| {
                let gold = family.gold(x);
                (0..negatives).map(|_| family.draw_noise(&gold, rng)).collect()
            })
            .collect();
        Ok(CdLoss { family, batch, noise, temperature })
    }

    /// Negatives for example `i` at the given θ.
    pub fn samples(&self, theta: &ParamVector, i: usize) -> Result<Vec<Vec<f64>>> {
        let (yhat, _) = self.family.infer(theta, self.batch[i])?;
        Ok(self.noise[i].iter().map(|n| self.family.relaxed_sample(&yhat, n, self.temperature)).collect())
    }
}

impl<F: StructuredFamily> ScalarFn for CdLoss<'_, F> {
    fn theta_len(&self) -> usize {
        self.family.theta_layout().len()
    }

    fn phi_len(&self) -> usize {
        self.family.phi_layout().len()
    }

    fn value(&self, theta: &ParamVector, phi: &ParamVector) -> Result<f64> {
        let f = |i: usize, gt: Option<&mut [f64]>, gp: Option<&mut [f64]>| {
            cd_example(self.family, theta, phi, self.batch[i], &self.noise[i], self.temperature, gt, gp)
        };
        Ok(batch_mean(self.batch.len(), None, &f)?.0)
    }

    fn grad(&self, group: Group, theta: &ParamVector, phi: &ParamVector) -> Result<Vec<f64>> {
        let f = |i: usize, gt: Option<&mut [f64]>, gp: Option<&mut [f64]>| {
            cd_example(self.family, theta, phi, self.batch[i], &self.noise[i], self.temperature, gt, gp)
        };
        Ok(batch_mean(self.batch.len(), Some((group, group_len(group, theta, phi))), &f)?.1)
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::data::MlcExample;
    use crate::losses::mbce;
    use crate::models::{MlcArch, MlcFamily};
    use crate::tensor::{check_gradient, softplus};

    fn family() -> MlcFamily {
        MlcFamily::new(MlcArch {
            n_features: 4,
            n_labels: 3,
            infer_hidden: vec![5],
            feature_hidden: vec![4],
            feature_dim: 3,
            global_hidden: 4,
        })
        .unwrap()
    }

    fn examples() -> Vec<MlcExample> {
        vec![
            MlcExample { features: vec![(0, 0.5), (2, -1.0)], labels: vec![true, false, true] },
            MlcExample { features: vec![(1, 1.5), (3, 0.3)], labels: vec![false, true, false] },
            MlcExample { features: vec![(0, -0.7), (3, 1.1)], labels: vec![false, false, false] },
        ]
    }

    #[test]
    fn formula_examples() {
        assert!((ssvm_margin(0.5, 0.2, 1.0, 0.0) - 1.3).abs() < 1e-15);
        assert_eq!(ssvm_margin(0.4, 3.0, 1.0, 0.5), 0.0);
        assert!((cd_from_terms(1.0, &[(0.0, 0.5)]).unwrap() - 1.701413).abs() < 1e-6);
        let k = 7;
        let v = cd_from_terms(0.0, &vec![(0.0, 0.0); k]).unwrap();
        assert!((v - ((k + 1) as f64).ln()).abs() < 1e-12);
        assert!(matches!(cd_from_terms(0.0, &[]), Err(Error::NoNegatives)));
        // K = 2 against a direct sum of exponentials
        let (eg, e1, s1, e2, s2): (f64, f64, f64, f64, f64) = (0.3, -0.4, 0.25, 1.2, 0.9);
        let direct = ((-eg).exp() + (-e1 + s1).exp() + (-e2 + s2).exp()).ln() + eg;
        assert!((cd_from_terms(eg, &[(e1, s1), (e2, s2)]).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn single_negative_reduces_to_softplus() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let e_gold = rng.random_range(-5.0..5.0);
            let e_neg = rng.random_range(-5.0..5.0);
            let s = rng.random_range(0.0..1.0);
            let cd = cd_from_terms(e_gold, &[(e_neg, s)]).unwrap();
            assert!((cd - softplus(s + e_gold - e_neg)).abs() < 1e-9);
        }
    }

    #[test]
    fn cd_decreases_in_negative_energy() {
        let mut last = f64::INFINITY;
        for e1 in [-2.0, -1.0, 0.0, 0.5, 3.0] {
            let v = cd_from_terms(0.7, &[(e1, 0.4)]).unwrap();
            assert!(v < last && v >= 0.0);
            last = v;
        }
    }

    #[test]
    fn aux_reduces_to_likelihood() {
        let fam = family();
        let (theta, phi) = fam.init_params(3);
        let zero_phi = ParamVector::zeros(fam.phi_layout().clone());
        for x in &examples() {
            let (yhat, _) = fam.infer(&theta, x).unwrap();
            let m = mbce(&fam.gold(x), &yhat, None).unwrap();
            assert_eq!(aux_loss(&fam, &theta, &phi, x, 0.0).unwrap(), m);
            assert_eq!(aux_loss(&fam, &theta, &zero_phi, x, 2.5).unwrap(), m);
            let feats = fam.features(&phi, x).unwrap();
            let e = fam.energy(&phi, &feats, &yhat).unwrap();
            assert!((aux_loss(&fam, &theta, &phi, x, 1.0).unwrap() - (m + e)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_energy_cases() {
        let fam = family();
        let (theta, _) = fam.init_params(4);
        let phi = ParamVector::zeros(fam.phi_layout().clone());
        let x = &examples()[0];
        let (yhat, _) = fam.infer(&theta, x).unwrap();
        let cost = fam.task_cost().soft(&yhat, &fam.gold(x), None).unwrap();
        assert!((ssvm_prim(&fam, &theta, &phi, x, 0.0).unwrap() - cost).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(cd_prim(&fam, &theta, &phi, x, 0, &mut rng), Err(Error::NoNegatives)));
        assert!(cd_prim(&fam, &theta, &phi, x, 5, &mut rng).unwrap() >= 0.0);
    }

    #[test]
    fn batch_losses_pass_gradient_check() {
        let fam = family();
        let data = examples();
        let batch: Vec<&MlcExample> = data.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let losses: Vec<Box<dyn ScalarFn>> = vec![
            Box::new(AuxLoss::new(&fam, batch.clone(), 0.0)),
            Box::new(AuxLoss::new(&fam, batch.clone(), 0.7)),
            Box::new(SsvmLoss::new(&fam, batch.clone(), 0.3)),
            Box::new(CdLoss::new(&fam, batch.clone(), 3, 0.5, &mut rng).unwrap()),
        ];
        for seed in 0..3 {
            let (theta, phi) = fam.init_params(100 + seed);
            for f in &losses {
                for group in [Group::Theta, Group::Phi] {
                    let c = check_gradient(f.as_ref(), group, &theta, &phi, 1e-5).unwrap();
                    assert!(c.rel_error < 1e-4, "{group:?}: {}", c.rel_error);
                }
            }
        }
    }

    #[test]
    fn primary_loss_config() {
        let p: PrimaryLoss = serde_json::from_str(r#"{"kind":"cd","negatives":5,"temperature":0.5}"#).unwrap();
        assert_eq!(p, PrimaryLoss::Cd { negatives: 5, temperature: 0.5 });
        let p: PrimaryLoss = serde_json::from_str(r#"{"kind":"ssvm"}"#).unwrap();
        assert_eq!(p, PrimaryLoss::Ssvm { lambda_rank: 0.0 });
        assert!(PrimaryLoss::Cd { negatives: 0, temperature: 0.5 }.validate().is_err());
    }
}
