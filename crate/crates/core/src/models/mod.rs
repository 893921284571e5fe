//! Energy networks `E_φ(x, y)` and inference networks `A_θ(x)`.
//!
//! Two families ship: multi-label classification ([`MlcFamily`]) with the
//! energy `yᵀW b(x) + vᵀσ(My)`, and sequence labeling ([`SeqFamily`]) with a
//! unary-plus-transition energy. Both expose the same [`StructuredFamily`]
//! surface so the objectives and trainers are written once.

mod mlc;
mod mlp;
mod seq;

use std::sync::Arc;

use rand::RngCore;

pub use mlc::{MlcArch, MlcFamily, MlcFeatures, MlcInferTrace};
pub use mlp::{Mlp, MlpTrace};
pub use seq::{SeqArch, SeqFamily, SeqFeatures, SeqInferTrace};

use crate::losses::{Scores, TaskCost};
use crate::tensor::{Layout, ParamVector};
use crate::Result;

/// Probabilities are clamped into `[PROB_FLOOR, 1 − PROB_FLOOR]` before any log.
pub const PROB_FLOOR: f64 = 1e-7;

#[inline]
pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

#[inline]
pub(crate) fn is_clamped(p: f64) -> bool {
    !(PROB_FLOOR..=1.0 - PROB_FLOOR).contains(&p)
}

/// A model family: an inference network over θ, an energy over φ, and the
/// label-space operations the losses need. Relaxed labels are flat vectors
/// (`L` entries for multi-label, `T·L` row-major for sequences).
pub trait StructuredFamily: Send + Sync {
    type Example: Send + Sync;
    type InferTrace: Send;
    type Features: Send + Sync;

    fn theta_layout(&self) -> &Arc<Layout>;
    fn phi_layout(&self) -> &Arc<Layout>;

    /// Seeded symmetric-uniform initialization of `(θ, φ)`.
    fn init_params(&self, seed: u64) -> (ParamVector, ParamVector);

    fn task_cost(&self) -> TaskCost;

    /// Gold output as a binary (multi-label) or one-hot (sequence) vector.
    fn gold(&self, x: &Self::Example) -> Vec<f64>;

    /// `A_θ(x)` plus the activations needed for the backward pass.
    fn infer(&self, theta: &ParamVector, x: &Self::Example) -> Result<(Vec<f64>, Self::InferTrace)>;

    /// Accumulates `(∂ŷ/∂θ)ᵀ d_out` into `grad_theta`.
    fn infer_backward(&self, theta: &ParamVector, trace: &Self::InferTrace, d_out: &[f64], grad_theta: &mut [f64]);

    /// The `x`-only part of the energy (feature network activations).
    fn features(&self, phi: &ParamVector, x: &Self::Example) -> Result<Self::Features>;

    fn energy(&self, phi: &ParamVector, feats: &Self::Features, y: &[f64]) -> Result<f64>;

    /// Returns `E(x, y)` and accumulates `scale · ∂E/∂φ` and `scale · ∂E/∂y`.
    fn energy_backward(
        &self,
        phi: &ParamVector,
        feats: &Self::Features,
        y: &[f64],
        scale: f64,
        grad_phi: Option<&mut [f64]>,
        grad_y: Option<&mut [f64]>,
    ) -> Result<f64>;

    /// Likelihood loss (MBCE or token cross-entropy); accumulates `∂/∂ŷ` into `d_yhat`.
    fn likelihood_loss(&self, gold: &[f64], yhat: &[f64], d_yhat: Option<&mut [f64]>) -> Result<f64>;

    /// One noise draw for a negative sample of `x`'s label space.
    fn draw_noise(&self, yhat: &[f64], rng: &mut dyn RngCore) -> Vec<f64>;

    /// Discrete sample from `ŷ` driven by `noise` (Bernoulli or categorical).
    fn hard_sample(&self, yhat: &[f64], noise: &[f64]) -> Vec<f64>;

    /// Temperature-`tau` relaxation of [`Self::hard_sample`]; equal to it as `tau → 0`.
    fn relaxed_sample(&self, yhat: &[f64], noise: &[f64], tau: f64) -> Vec<f64>;

    /// `(∂sample/∂ŷ)ᵀ d_sample` for [`Self::relaxed_sample`].
    fn relaxed_sample_backward(&self, yhat: &[f64], noise: &[f64], tau: f64, d_sample: &[f64]) -> Vec<f64>;

    /// Discrete prediction from a relaxed output.
    fn decode(&self, yhat: &[f64]) -> Vec<f64>;

    /// Task metrics for decoded predictions against gold outputs.
    fn score(&self, predictions: &[Vec<f64>], golds: &[Vec<f64>]) -> Result<Scores>;
}

/// Energy of the gold output, `E_φ(x, y)`.
pub fn gold_energy<F: StructuredFamily>(family: &F, phi: &ParamVector, x: &F::Example) -> Result<f64> {
    let feats = family.features(phi, x)?;
    family.energy(phi, &feats, &family.gold(x))
}

/// Decoded predictions of `A_θ` on a dataset, and the resulting scores.
pub fn evaluate<F: StructuredFamily>(family: &F, theta: &ParamVector, data: &[F::Example]) -> Result<Scores> {
    let mut preds = Vec::with_capacity(data.len());
    let mut golds = Vec::with_capacity(data.len());
    for x in data {
        let (yhat, _) = family.infer(theta, x)?;
        preds.push(family.decode(&yhat));
        golds.push(family.gold(x));
    }
    family.score(&preds, &golds)
}
