//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use strucgrad::losses::PrimaryLoss;
use strucgrad::models::{MlcArch, MlcFamily, SeqArch, SeqFamily, StructuredFamily};
use strucgrad::tensor::{Group, ParamVector, ScalarFn};
use strucgrad::trainer::{Optimizer, TrainConfig};
use strucgrad::{IhvpConfig, Result};

pub fn mlc_family(n_features: usize, n_labels: usize, infer_hidden: Vec<usize>) -> MlcFamily {
    MlcFamily::new(MlcArch {
        n_features,
        n_labels,
        infer_hidden,
        feature_hidden: vec![4],
        feature_dim: 3,
        global_hidden: 4,
    })
    .unwrap()
}

pub fn seq_family(vocab_size: usize, n_tags: usize) -> SeqFamily {
    SeqFamily::new(SeqArch {
        vocab_size,
        n_tags,
        embed_dim: 3,
        infer_hidden: vec![4],
        feature_hidden: vec![3],
        feature_dim: 3,
    })
    .unwrap()
}

/// Seeded initialization plus uniform noise, so checks do not only run near the origin.
pub fn perturbed_params<F: StructuredFamily>(family: &F, seed: u64, rng: &mut ChaCha8Rng) -> (ParamVector, ParamVector) {
    let (mut theta, mut phi) = family.init_params(seed);
    for v in theta.as_mut_slice().iter_mut().chain(phi.as_mut_slice()) {
        *v += rng.random_range(-0.3..0.3);
    }
    (theta, phi)
}

/// `Σ_x E_φ(x, y_x)` with the relaxed labels `y` of the whole batch standing in for θ.
pub struct EnergyOfLabels<'a, F: StructuredFamily> {
    family: &'a F,
    batch: Vec<&'a F::Example>,
    offsets: Vec<usize>,
}

impl<'a, F: StructuredFamily> EnergyOfLabels<'a, F> {
    pub fn new(family: &'a F, batch: Vec<&'a F::Example>) -> Self {
        let mut offsets = vec![0];
        for x in &batch {
            offsets.push(offsets.last().unwrap() + family.gold(x).len());
        }
        EnergyOfLabels { family, batch, offsets }
    }

    pub fn random_labels(&self, rng: &mut ChaCha8Rng) -> ParamVector {
        ParamVector::unstructured((0..*self.offsets.last().unwrap()).map(|_| rng.random_range(0.05..0.95)).collect())
    }
}

impl<F: StructuredFamily> ScalarFn for EnergyOfLabels<'_, F> {
    fn theta_len(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    fn phi_len(&self) -> usize {
        self.family.phi_layout().len()
    }

    fn value(&self, y: &ParamVector, phi: &ParamVector) -> Result<f64> {
        let mut total = 0.0;
        for (i, x) in self.batch.iter().enumerate() {
            let feats = self.family.features(phi, x)?;
            total += self.family.energy(phi, &feats, &y.as_slice()[self.offsets[i]..self.offsets[i + 1]])?;
        }
        Ok(total)
    }

    fn grad(&self, group: Group, y: &ParamVector, phi: &ParamVector) -> Result<Vec<f64>> {
        let mut g = vec![0.0; if group == Group::Theta { y.len() } else { phi.len() }];
        for (i, x) in self.batch.iter().enumerate() {
            let feats = self.family.features(phi, x)?;
            let (a, b) = (self.offsets[i], self.offsets[i + 1]);
            match group {
                Group::Theta => {
                    self.family.energy_backward(phi, &feats, &y.as_slice()[a..b], 1.0, None, Some(&mut g[a..b]))?;
                }
                Group::Phi => {
                    self.family.energy_backward(phi, &feats, &y.as_slice()[a..b], 1.0, Some(&mut g), None)?;
                }
            }
        }
        Ok(g)
    }
}

/// Multi-label run configuration used for the method comparison on planted-coupling data.
pub fn desk_scale_config(seed: u64, t_outer: usize) -> String {
    serde_json::json!({
        "version": 1,
        "task": "mlc",
        "model": {"infer_hidden": [], "feature_hidden": [16], "feature_dim": 16, "global_hidden": 16},
        "data": {"synth": {
            "synth": {"n_labels": 8, "n_features": 16, "n_examples": 2000, "seed": seed},
            "split": [0.8, 0.1, 0.1]
        }},
        "train": {
            "t_inner": 5, "t_outer": t_outer, "eta_inner": 0.5, "eta_outer": 1.0, "lambda": 5.0,
            "primary": {"kind": "cd", "negatives": 20, "temperature": 1.0},
            "ihvp": {"k": 5, "alpha": 0.1, "delta": 1e-3},
            "batch_size": 32, "seed": seed, "eval_every": 10, "patience": 10
        }
    })
    .to_string()
}

pub fn small_train_config(t_inner: usize, t_outer: usize) -> TrainConfig {
    TrainConfig {
        t_inner,
        t_outer,
        eta_inner: 0.2,
        eta_outer: 0.1,
        lambda: 1.0,
        primary: PrimaryLoss::Cd { negatives: 3, temperature: 0.5 },
        ihvp: IhvpConfig::default(),
        batch_size: 8,
        seed: 3,
        eval_every: 1,
        patience: Some(10),
        optimizer: Optimizer::Sgd,
        fresh_outer_batch: false,
    }
}
