use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{clamp_prob, is_clamped, Mlp, MlpTrace, StructuredFamily};
use crate::data::MlcExample;
use crate::losses::{mbce, multi_label_scores, Scores, TaskCost};
use crate::tensor::{dot, gemv, gemv_t_acc, outer_acc, sigmoid, Layout, ParamVector};
use crate::{Error, Result};

/// Architecture of the multi-label family.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlcArch {
    pub n_features: usize,
    pub n_labels: usize,
    /// Hidden widths of the inference network `A_θ`.
    pub infer_hidden: Vec<usize>,
    /// Hidden widths of the energy's feature network `b(x)`.
    pub feature_hidden: Vec<usize>,
    /// Output width of `b(x)`.
    pub feature_dim: usize,
    /// Rows of `M` in the global term `vᵀσ(My)`.
    pub global_hidden: usize,
}

impl MlcArch {
    pub fn validate(&self) -> Result<()> {
        let widths = [self.n_features, self.n_labels, self.feature_dim, self.global_hidden];
        if widths.contains(&0) || self.infer_hidden.contains(&0) || self.feature_hidden.contains(&0) {
            return Err(Error::invalid("all layer widths must be positive"));
        }
        Ok(())
    }
}

/// Multi-label energy `E_φ(x, y) = yᵀW b(x) + vᵀσ(My)` and a sigmoid-output
/// inference network. θ and φ share no parameters.
///
/// φ segments: `feat.*` (the MLP `b`), `energy.W` (L × d_b), `energy.M`
/// (h × L), `energy.v` (h). θ segments: `infer.*`.
#[derive(Clone, Debug)]
pub struct MlcFamily {
    arch: MlcArch,
    theta_layout: Arc<Layout>,
    phi_layout: Arc<Layout>,
    infer: Mlp,
    feature: Mlp,
    w_off: usize,
    m_off: usize,
    v_off: usize,
}

#[derive(Clone, Debug)]
pub struct MlcInferTrace {
    mlp: MlpTrace,
    // unclamped sigmoid outputs
    probs: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct MlcFeatures {
    mlp: MlpTrace,
}

impl MlcFeatures {
    /// `b(x)`
    pub fn output(&self) -> &[f64] {
        self.mlp.output()
    }
}

impl MlcFamily {
    pub fn new(arch: MlcArch) -> Result<Self> {
        arch.validate()?;
        let (d, l) = (arch.n_features, arch.n_labels);

        let mut tb = Layout::builder();
        let infer_widths: Vec<usize> = std::iter::once(d).chain(arch.infer_hidden.iter().copied()).chain([l]).collect();
        let infer = Mlp::declare(&mut tb, "infer", &infer_widths);

        let mut pb = Layout::builder();
        let feat_widths: Vec<usize> =
            std::iter::once(d).chain(arch.feature_hidden.iter().copied()).chain([arch.feature_dim]).collect();
        let feature = Mlp::declare(&mut pb, "feat", &feat_widths);
        let w_off = pb.push("energy.W", &[l, arch.feature_dim]);
        let m_off = pb.push("energy.M", &[arch.global_hidden, l]);
        let v_off = pb.push("energy.v", &[arch.global_hidden]);

        Ok(MlcFamily {
            arch,
            theta_layout: Arc::new(tb.build()),
            phi_layout: Arc::new(pb.build()),
            infer,
            feature,
            w_off,
            m_off,
            v_off,
        })
    }

    pub fn arch(&self) -> &MlcArch {
        &self.arch
    }

    fn dense(&self, x: &MlcExample) -> Result<Vec<f64>> {
        if x.labels.len() != self.arch.n_labels {
            return Err(Error::shape(format!(
                "example has {} labels, model expects {}",
                x.labels.len(),
                self.arch.n_labels
            )));
        }
        if let Some(&(i, _)) = x.features.last() {
            if i >= self.arch.n_features {
                return Err(Error::shape(format!(
                    "feature index {i} outside model dimension {}",
                    self.arch.n_features
                )));
            }
        }
        Ok(x.dense_features(self.arch.n_features))
    }

    fn check_label(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.arch.n_labels {
            return Err(Error::shape(format!("label vector of length {}, expected {}", y.len(), self.arch.n_labels)));
        }
        Ok(())
    }

    /// Hessian of the global term `vᵀσ(My)` with respect to `y`:
    /// `Mᵀ diag(v ⊙ σ''(My)) M`, row-major `L × L`.
    pub fn global_energy_hessian(&self, phi: &ParamVector, y: &[f64]) -> Result<Vec<f64>> {
        self.check_label(y)?;
        let (l, h) = (self.arch.n_labels, self.arch.global_hidden);
        let p = phi.as_slice();
        let m = &p[self.m_off..self.m_off + h * l];
        let v = &p[self.v_off..self.v_off + h];
        let mut a = vec![0.0; h];
        gemv(m, h, l, y, &mut a);
        let mut out = vec![0.0; l * l];
        for r in 0..h {
            let s = sigmoid(a[r]);
            let c = v[r] * s * (1.0 - s) * (1.0 - 2.0 * s);
            if c != 0.0 {
                let row = &m[r * l..(r + 1) * l];
                outer_acc(&mut out, c, row, row);
            }
        }
        Ok(out)
    }
}

impl StructuredFamily for MlcFamily {
    type Example = MlcExample;
    type InferTrace = MlcInferTrace;
    type Features = MlcFeatures;

    fn theta_layout(&self) -> &Arc<Layout> {
        &self.theta_layout
    }

    fn phi_layout(&self) -> &Arc<Layout> {
        &self.phi_layout
    }

    fn init_params(&self, seed: u64) -> (ParamVector, ParamVector) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = ParamVector::zeros(self.theta_layout.clone());
        self.infer.init(theta.as_mut_slice(), &mut rng);
        let mut phi = ParamVector::zeros(self.phi_layout.clone());
        self.feature.init(phi.as_mut_slice(), &mut rng);
        let (l, db, h) = (self.arch.n_labels, self.arch.feature_dim, self.arch.global_hidden);
        let p = phi.as_mut_slice();
        for (off, len, fan_in, fan_out) in [(self.w_off, l * db, db, l), (self.m_off, h * l, l, h), (self.v_off, h, h, 1)] {
            let r = (6.0 / (fan_in + fan_out) as f64).sqrt();
            p[off..off + len].iter_mut().for_each(|w| *w = rng.random_range(-r..=r));
        }
        (theta, phi)
    }

    fn task_cost(&self) -> TaskCost {
        TaskCost::F1
    }

    fn gold(&self, x: &MlcExample) -> Vec<f64> {
        x.labels.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    fn infer(&self, theta: &ParamVector, x: &MlcExample) -> Result<(Vec<f64>, MlcInferTrace)> {
        let input = self.dense(x)?;
        let mlp = self.infer.forward(theta.as_slice(), &input);
        let probs: Vec<f64> = mlp.output().iter().map(|&z| sigmoid(z)).collect();
        let out = probs.iter().map(|&p| clamp_prob(p)).collect();
        Ok((out, MlcInferTrace { mlp, probs }))
    }

    fn infer_backward(&self, theta: &ParamVector, trace: &MlcInferTrace, d_out: &[f64], grad_theta: &mut [f64]) {
        let d_logits: Vec<f64> = trace
            .probs
            .iter()
            .zip(d_out)
            .map(|(&p, &d)| if is_clamped(p) { 0.0 } else { d * p * (1.0 - p) })
            .collect();
        self.infer.backward(theta.as_slice(), &trace.mlp, &d_logits, grad_theta, None);
    }

    fn features(&self, phi: &ParamVector, x: &MlcExample) -> Result<MlcFeatures> {
        let input = self.dense(x)?;
        Ok(MlcFeatures { mlp: self.feature.forward(phi.as_slice(), &input) })
    }

    fn energy(&self, phi: &ParamVector, feats: &MlcFeatures, y: &[f64]) -> Result<f64> {
        self.energy_backward(phi, feats, y, 0.0, None, None)
    }

    fn energy_backward(
        &self,
        phi: &ParamVector,
        feats: &MlcFeatures,
        y: &[f64],
        scale: f64,
        grad_phi: Option<&mut [f64]>,
        grad_y: Option<&mut [f64]>,
    ) -> Result<f64> {
        self.check_label(y)?;
        let (l, db, h) = (self.arch.n_labels, self.arch.feature_dim, self.arch.global_hidden);
        let p = phi.as_slice();
        let w = &p[self.w_off..self.w_off + l * db];
        let m = &p[self.m_off..self.m_off + h * l];
        let v = &p[self.v_off..self.v_off + h];
        let b = feats.output();

        let mut wb = vec![0.0; l];
        gemv(w, l, db, b, &mut wb);
        let mut a = vec![0.0; h];
        gemv(m, h, l, y, &mut a);
        let s: Vec<f64> = a.iter().map(|&z| sigmoid(z)).collect();
        let energy = dot(y, &wb) + dot(v, &s);

        if grad_phi.is_none() && grad_y.is_none() {
            return Ok(energy);
        }
        // ∂E/∂a = v ⊙ σ'(a)
        let da: Vec<f64> = v.iter().zip(&s).map(|(&vi, &si)| vi * si * (1.0 - si)).collect();
        if let Some(gy) = grad_y {
            for (g, x) in gy.iter_mut().zip(&wb) {
                *g += scale * x;
            }
            let mut mt_da = vec![0.0; l];
            gemv_t_acc(m, h, l, &da, &mut mt_da);
            for (g, x) in gy.iter_mut().zip(&mt_da) {
                *g += scale * x;
            }
        }
        if let Some(gp) = grad_phi {
            outer_acc(&mut gp[self.w_off..self.w_off + l * db], scale, y, b);
            outer_acc(&mut gp[self.m_off..self.m_off + h * l], scale, &da, y);
            for (g, si) in gp[self.v_off..self.v_off + h].iter_mut().zip(&s) {
                *g += scale * si;
            }
            // ∂E/∂b = Wᵀy
            let mut db_vec = vec![0.0; db];
            gemv_t_acc(w, l, db, y, &mut db_vec);
            db_vec.iter_mut().for_each(|x| *x *= scale);
            self.feature.backward(p, &feats.mlp, &db_vec, gp, None);
        }
        Ok(energy)
    }

    fn likelihood_loss(&self, gold: &[f64], yhat: &[f64], d_yhat: Option<&mut [f64]>) -> Result<f64> {
        mbce(gold, yhat, d_yhat)
    }

    fn draw_noise(&self, yhat: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        (0..yhat.len()).map(|_| rng.random::<f64>()).collect()
    }

    fn hard_sample(&self, yhat: &[f64], noise: &[f64]) -> Vec<f64> {
        crate::losses::bernoulli_from_uniform(yhat, noise)
    }

    fn relaxed_sample(&self, yhat: &[f64], noise: &[f64], tau: f64) -> Vec<f64> {
        if tau == 0.0 {
            return self.hard_sample(yhat, noise);
        }
        yhat.iter()
            .zip(noise)
            .map(|(&p, &u)| sigmoid((logit(clamp_prob(p)) - logit(clamp_uniform(u))) / tau))
            .collect()
    }

    fn relaxed_sample_backward(&self, yhat: &[f64], noise: &[f64], tau: f64, d_sample: &[f64]) -> Vec<f64> {
        if tau == 0.0 {
            return vec![0.0; yhat.len()];
        }
        let r = self.relaxed_sample(yhat, noise, tau);
        yhat.iter()
            .zip(&r)
            .zip(d_sample)
            .map(|((&p, &ri), &d)| if is_clamped(p) { 0.0 } else { d * ri * (1.0 - ri) / (tau * p * (1.0 - p)) })
            .collect()
    }

    fn decode(&self, yhat: &[f64]) -> Vec<f64> {
        yhat.iter().map(|&p| if p >= 0.5 { 1.0 } else { 0.0 }).collect()
    }

    fn score(&self, predictions: &[Vec<f64>], golds: &[Vec<f64>]) -> Result<Scores> {
        let to_bool = |v: &Vec<f64>| v.iter().map(|&x| x >= 0.5).collect::<Vec<bool>>();
        let p: Vec<Vec<bool>> = predictions.iter().map(to_bool).collect();
        let g: Vec<Vec<bool>> = golds.iter().map(to_bool).collect();
        Ok(Scores::MultiLabel(multi_label_scores(&p, &g)?))
    }
}

#[inline]
fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[inline]
fn clamp_uniform(u: f64) -> f64 {
    u.clamp(1e-12, 1.0 - 1e-12)
}
