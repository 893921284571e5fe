//! Synthetic multi-label data with planted label dependence.
//!
//! Features are standard normal; labels are drawn by Gibbs sweeps from
//! `p(y | x) ∝ exp(yᵀ(Wx + b) + yᵀJy)` where `J` is symmetric with a zero
//! diagonal. With `J = 0` the labels are conditionally independent given `x`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{MlcDataset, MlcExample};
use crate::tensor::{sigmoid, Matrix};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n_labels: usize,
    pub n_features: usize,
    pub n_examples: usize,
    /// Pairwise label coupling `J` (L × L, symmetric, zero diagonal).
    pub coupling: Matrix,
    /// Feature-to-label weights are `N(0, weight_scale² / d)`.
    pub weight_scale: f64,
    /// Shared label bias `b`.
    pub label_bias: f64,
    pub gibbs_sweeps: usize,
    pub seed: u64,
}

impl SynthSpec {
    /// Default generator with planted positive couplings between labels
    /// `(0,1), (2,3), …` and negative couplings between neighbouring pairs.
    pub fn planted(n_labels: usize, n_features: usize, n_examples: usize, seed: u64) -> Self {
        SynthSpec {
            n_labels,
            n_features,
            n_examples,
            coupling: Self::planted_coupling(n_labels, 1.5, -1.0),
            weight_scale: 1.5,
            label_bias: -1.0,
            gibbs_sweeps: 20,
            seed,
        }
    }

    pub fn planted_coupling(n_labels: usize, positive: f64, negative: f64) -> Matrix {
        let mut j = Matrix::zeros(n_labels, n_labels);
        let mut set = |a: usize, b: usize, v: f64| {
            j.set(a, b, v);
            j.set(b, a, v);
        };
        for i in (0..n_labels.saturating_sub(1)).step_by(2) {
            set(i, i + 1, positive);
            if i + 2 < n_labels {
                set(i + 1, i + 2, negative);
            }
        }
        j
    }

    pub fn independent(mut self) -> Self {
        self.coupling = Matrix::zeros(self.n_labels, self.n_labels);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_labels == 0 || self.n_features == 0 {
            return Err(Error::invalid("synthetic data needs at least one label and one feature"));
        }
        let j = &self.coupling;
        if j.rows() != self.n_labels || j.cols() != self.n_labels {
            return Err(Error::shape(format!(
                "coupling is {}x{}, expected {}x{}",
                j.rows(),
                j.cols(),
                self.n_labels,
                self.n_labels
            )));
        }
        if !j.is_symmetric(0.0) || (0..self.n_labels).any(|i| j.get(i, i) != 0.0) {
            return Err(Error::invalid("coupling must be symmetric with a zero diagonal"));
        }
        if !self.weight_scale.is_finite() || !self.label_bias.is_finite() || !j.as_slice().iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("synthetic parameters must be finite"));
        }
        Ok(())
    }

    /// The feature-to-label weight matrix `W` (L × d) the generator uses.
    pub fn label_weights(&self) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        self.draw_weights(&mut rng)
    }

    fn draw_weights(&self, rng: &mut ChaCha8Rng) -> Matrix {
        let sd = self.weight_scale / (self.n_features as f64).sqrt();
        let data = (0..self.n_labels * self.n_features)
            .map(|_| { let z: f64 = StandardNormal.sample(rng); sd * z })
            .collect();
        Matrix::from_vec(self.n_labels, self.n_features, data).expect("sized above")
    }
}

pub fn gen_synth(spec: &SynthSpec) -> Result<MlcDataset> {
    spec.validate()?;
    let (l, d) = (spec.n_labels, spec.n_features);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let w = spec.draw_weights(&mut rng);
    let j = &spec.coupling;
    let mut examples = Vec::with_capacity(spec.n_examples);
    for _ in 0..spec.n_examples {
        let x: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let unary: Vec<f64> = w.matvec(&x)?.into_iter().map(|u| u + spec.label_bias).collect();
        let mut y: Vec<bool> = unary.iter().map(|&u| rng.random::<f64>() < sigmoid(u)).collect();
        for _ in 0..spec.gibbs_sweeps {
            for i in 0..l {
                let field: f64 = (0..l).filter(|&k| y[k]).map(|k| j.get(i, k)).sum();
                y[i] = rng.random::<f64>() < sigmoid(unary[i] + 2.0 * field);
            }
        }
        examples.push(MlcExample { features: x.into_iter().enumerate().collect(), labels: y });
    }
    Ok(MlcDataset { n_features: d, n_labels: l, examples })
}

/// Joint label counts `C_ij = #{examples with labels i and j}`, diagonal zeroed.
pub fn cooccurrence(data: &MlcDataset) -> Matrix {
    let l = data.n_labels;
    let mut c = Matrix::zeros(l, l);
    for ex in &data.examples {
        let on = ex.label_set();
        for (a, &i) in on.iter().enumerate() {
            for &k in &on[a + 1..] {
                c.set(i, k, c.get(i, k) + 1.0);
                c.set(k, i, c.get(k, i) + 1.0);
            }
        }
    }
    c
}
