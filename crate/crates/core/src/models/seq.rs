use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{clamp_prob, is_clamped, Mlp, MlpTrace, StructuredFamily};
use crate::data::SeqExample;
use crate::losses::{token_accuracy, token_cross_entropy, Scores, TaskCost};
use crate::tensor::{gemv, gemv_t_acc, outer_acc, softmax, Layout, ParamVector};
use crate::{Error, Result};

/// Tokens on each side of a position fed to the per-position networks.
pub const WINDOW_RADIUS: usize = 1;
const WINDOW: usize = 2 * WINDOW_RADIUS + 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeqArch {
    pub vocab_size: usize,
    pub n_tags: usize,
    pub embed_dim: usize,
    pub infer_hidden: Vec<usize>,
    pub feature_hidden: Vec<usize>,
    /// Width of `b(x, t)`.
    pub feature_dim: usize,
}

impl SeqArch {
    pub fn validate(&self) -> Result<()> {
        let widths = [self.vocab_size, self.n_tags, self.embed_dim, self.feature_dim];
        if widths.contains(&0) || self.infer_hidden.contains(&0) || self.feature_hidden.contains(&0) {
            return Err(Error::invalid("all layer widths must be positive"));
        }
        Ok(())
    }
}

/// Sequence energy `Σ_t Σ_j y_tj U_jᵀ b(x,t) + Σ_{t≥2} y_{t−1}ᵀ W y_t`.
///
/// Both `b(x, t)` and the inference network read a window of learned token
/// embeddings around `t`, zero-padded at the sentence boundaries. θ and φ
/// keep separate embedding tables.
///
/// φ segments: `feat.emb` (V × e), `feat.*`, `energy.U` (L × d_b),
/// `energy.W` (L × L). θ segments: `infer.emb`, `infer.*`.
#[derive(Clone, Debug)]
pub struct SeqFamily {
    arch: SeqArch,
    theta_layout: Arc<Layout>,
    phi_layout: Arc<Layout>,
    infer_emb: usize,
    infer: Mlp,
    feat_emb: usize,
    feature: Mlp,
    u_off: usize,
    w_off: usize,
}

#[derive(Clone, Debug)]
pub struct SeqInferTrace {
    tokens: Vec<usize>,
    positions: Vec<MlpTrace>,
    probs: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct SeqFeatures {
    tokens: Vec<usize>,
    positions: Vec<MlpTrace>,
}

impl SeqFeatures {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// `b(x, t)`
    pub fn output(&self, t: usize) -> &[f64] {
        self.positions[t].output()
    }
}

impl SeqFamily {
    pub fn new(arch: SeqArch) -> Result<Self> {
        arch.validate()?;
        let (v, e, l) = (arch.vocab_size, arch.embed_dim, arch.n_tags);

        let mut tb = Layout::builder();
        let infer_emb = tb.push("infer.emb", &[v, e]);
        let widths: Vec<usize> =
            std::iter::once(WINDOW * e).chain(arch.infer_hidden.iter().copied()).chain([l]).collect();
        let infer = Mlp::declare(&mut tb, "infer", &widths);

        let mut pb = Layout::builder();
        let feat_emb = pb.push("feat.emb", &[v, e]);
        let widths: Vec<usize> =
            std::iter::once(WINDOW * e).chain(arch.feature_hidden.iter().copied()).chain([arch.feature_dim]).collect();
        let feature = Mlp::declare(&mut pb, "feat", &widths);
        let u_off = pb.push("energy.U", &[l, arch.feature_dim]);
        let w_off = pb.push("energy.W", &[l, l]);

        Ok(SeqFamily {
            arch,
            theta_layout: Arc::new(tb.build()),
            phi_layout: Arc::new(pb.build()),
            infer_emb,
            infer,
            feat_emb,
            feature,
            u_off,
            w_off,
        })
    }

    pub fn arch(&self) -> &SeqArch {
        &self.arch
    }

    fn check_tokens(&self, x: &SeqExample) -> Result<()> {
        if x.is_empty() {
            return Err(Error::EmptySequence);
        }
        if x.tags.len() != x.tokens.len() {
            return Err(Error::shape("tokens and tags differ in length"));
        }
        if let Some(&id) = x.tokens.iter().find(|&&id| id >= self.arch.vocab_size) {
            return Err(Error::shape(format!("token id {id} outside vocabulary of {}", self.arch.vocab_size)));
        }
        if let Some(&tag) = x.tags.iter().find(|&&tag| tag >= self.arch.n_tags) {
            return Err(Error::shape(format!("tag id {tag} outside tag set of {}", self.arch.n_tags)));
        }
        Ok(())
    }

    fn window(&self, params: &[f64], emb_off: usize, tokens: &[usize], t: usize) -> Vec<f64> {
        let e = self.arch.embed_dim;
        let mut out = vec![0.0; WINDOW * e];
        for (k, slot) in out.chunks_mut(e).enumerate() {
            let pos = t as isize + k as isize - WINDOW_RADIUS as isize;
            if pos >= 0 && (pos as usize) < tokens.len() {
                let id = tokens[pos as usize];
                slot.copy_from_slice(&params[emb_off + id * e..emb_off + (id + 1) * e]);
            }
        }
        out
    }

    fn scatter_window(&self, grad: &mut [f64], emb_off: usize, tokens: &[usize], t: usize, d_window: &[f64]) {
        let e = self.arch.embed_dim;
        for (k, slot) in d_window.chunks(e).enumerate() {
            let pos = t as isize + k as isize - WINDOW_RADIUS as isize;
            if pos >= 0 && (pos as usize) < tokens.len() {
                let id = tokens[pos as usize];
                for (g, d) in grad[emb_off + id * e..emb_off + (id + 1) * e].iter_mut().zip(slot) {
                    *g += d;
                }
            }
        }
    }

    fn check_label(&self, feats: &SeqFeatures, y: &[f64]) -> Result<usize> {
        let t = feats.len();
        if t == 0 {
            return Err(Error::EmptySequence);
        }
        if y.len() != t * self.arch.n_tags {
            return Err(Error::shape(format!(
                "label matrix has {} entries, expected {t} x {}",
                y.len(),
                self.arch.n_tags
            )));
        }
        Ok(t)
    }
}

impl StructuredFamily for SeqFamily {
    type Example = SeqExample;
    type InferTrace = SeqInferTrace;
    type Features = SeqFeatures;

    fn theta_layout(&self) -> &Arc<Layout> {
        &self.theta_layout
    }

    fn phi_layout(&self) -> &Arc<Layout> {
        &self.phi_layout
    }

    fn init_params(&self, seed: u64) -> (ParamVector, ParamVector) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (v, e, l, db) = (self.arch.vocab_size, self.arch.embed_dim, self.arch.n_tags, self.arch.feature_dim);
        let uniform = |buf: &mut [f64], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng| {
            let r = (6.0 / (fan_in + fan_out) as f64).sqrt();
            buf.iter_mut().for_each(|w| *w = rng.random_range(-r..=r));
        };

        let mut theta = ParamVector::zeros(self.theta_layout.clone());
        uniform(&mut theta.as_mut_slice()[self.infer_emb..self.infer_emb + v * e], v, e, &mut rng);
        self.infer.init(theta.as_mut_slice(), &mut rng);

        let mut phi = ParamVector::zeros(self.phi_layout.clone());
        let p = phi.as_mut_slice();
        uniform(&mut p[self.feat_emb..self.feat_emb + v * e], v, e, &mut rng);
        self.feature.init(p, &mut rng);
        uniform(&mut p[self.u_off..self.u_off + l * db], db, l, &mut rng);
        uniform(&mut p[self.w_off..self.w_off + l * l], l, l, &mut rng);
        (theta, phi)
    }

    fn task_cost(&self) -> TaskCost {
        TaskCost::Hamming { n_tags: self.arch.n_tags }
    }

    fn gold(&self, x: &SeqExample) -> Vec<f64> {
        let l = self.arch.n_tags;
        let mut y = vec![0.0; x.len() * l];
        for (t, &tag) in x.tags.iter().enumerate() {
            y[t * l + tag] = 1.0;
        }
        y
    }

    fn infer(&self, theta: &ParamVector, x: &SeqExample) -> Result<(Vec<f64>, SeqInferTrace)> {
        self.check_tokens(x)?;
        let p = theta.as_slice();
        let mut probs = Vec::with_capacity(x.len() * self.arch.n_tags);
        let mut positions = Vec::with_capacity(x.len());
        for t in 0..x.len() {
            let trace = self.infer.forward(p, &self.window(p, self.infer_emb, &x.tokens, t));
            probs.extend(softmax(trace.output()));
            positions.push(trace);
        }
        Ok((probs.clone(), SeqInferTrace { tokens: x.tokens.clone(), positions, probs }))
    }

    fn infer_backward(&self, theta: &ParamVector, trace: &SeqInferTrace, d_out: &[f64], grad_theta: &mut [f64]) {
        let l = self.arch.n_tags;
        let p = theta.as_slice();
        for (t, pos) in trace.positions.iter().enumerate() {
            let probs = &trace.probs[t * l..(t + 1) * l];
            let d = &d_out[t * l..(t + 1) * l];
            let inner: f64 = probs.iter().zip(d).map(|(a, b)| a * b).sum();
            let d_logits: Vec<f64> = probs.iter().zip(d).map(|(&pi, &di)| pi * (di - inner)).collect();
            let mut d_window = vec![0.0; self.infer.input_dim()];
            self.infer.backward(p, pos, &d_logits, grad_theta, Some(&mut d_window));
            self.scatter_window(grad_theta, self.infer_emb, &trace.tokens, t, &d_window);
        }
    }

    fn features(&self, phi: &ParamVector, x: &SeqExample) -> Result<SeqFeatures> {
        self.check_tokens(x)?;
        let p = phi.as_slice();
        let positions = (0..x.len())
            .map(|t| self.feature.forward(p, &self.window(p, self.feat_emb, &x.tokens, t)))
            .collect();
        Ok(SeqFeatures { tokens: x.tokens.clone(), positions })
    }

    fn energy(&self, phi: &ParamVector, feats: &SeqFeatures, y: &[f64]) -> Result<f64> {
        self.energy_backward(phi, feats, y, 0.0, None, None)
    }

    fn energy_backward(
        &self,
        phi: &ParamVector,
        feats: &SeqFeatures,
        y: &[f64],
        scale: f64,
        mut grad_phi: Option<&mut [f64]>,
        mut grad_y: Option<&mut [f64]>,
    ) -> Result<f64> {
        let t_len = self.check_label(feats, y)?;
        let (l, db) = (self.arch.n_tags, self.arch.feature_dim);
        let p = phi.as_slice();
        let u = &p[self.u_off..self.u_off + l * db];
        let w = &p[self.w_off..self.w_off + l * l];
        let row = |t: usize| &y[t * l..(t + 1) * l];

        let mut energy = 0.0;
        let mut ub = vec![0.0; l];
        for t in 0..t_len {
            let b = feats.output(t);
            gemv(u, l, db, b, &mut ub);
            energy += row(t).iter().zip(&ub).map(|(a, c)| a * c).sum::<f64>();
            if let Some(gy) = grad_y.as_deref_mut() {
                for (g, c) in gy[t * l..(t + 1) * l].iter_mut().zip(&ub) {
                    *g += scale * c;
                }
            }
            if let Some(gp) = grad_phi.as_deref_mut() {
                outer_acc(&mut gp[self.u_off..self.u_off + l * db], scale, row(t), b);
                let mut d_b = vec![0.0; db];
                gemv_t_acc(u, l, db, row(t), &mut d_b);
                d_b.iter_mut().for_each(|v| *v *= scale);
                let mut d_window = vec![0.0; self.feature.input_dim()];
                self.feature.backward(p, &feats.positions[t], &d_b, gp, Some(&mut d_window));
                self.scatter_window(gp, self.feat_emb, &feats.tokens, t, &d_window);
            }
        }

        let mut wy = vec![0.0; l];
        for t in 1..t_len {
            // y_{t−1}ᵀ W y_t
            gemv(w, l, l, row(t), &mut wy);
            energy += row(t - 1).iter().zip(&wy).map(|(a, c)| a * c).sum::<f64>();
            if let Some(gy) = grad_y.as_deref_mut() {
                for (g, c) in gy[(t - 1) * l..t * l].iter_mut().zip(&wy) {
                    *g += scale * c;
                }
                let mut wt_prev = vec![0.0; l];
                gemv_t_acc(w, l, l, row(t - 1), &mut wt_prev);
                for (g, c) in gy[t * l..(t + 1) * l].iter_mut().zip(&wt_prev) {
                    *g += scale * c;
                }
            }
            if let Some(gp) = grad_phi.as_deref_mut() {
                outer_acc(&mut gp[self.w_off..self.w_off + l * l], scale, row(t - 1), row(t));
            }
        }
        Ok(energy)
    }

    fn likelihood_loss(&self, gold: &[f64], yhat: &[f64], d_yhat: Option<&mut [f64]>) -> Result<f64> {
        token_cross_entropy(gold, yhat, self.arch.n_tags, d_yhat)
    }

    /// Standard Gumbel noise, one value per tag per position.
    fn draw_noise(&self, yhat: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        (0..yhat.len())
            .map(|_| {
                let u: f64 = rng.random::<f64>().clamp(1e-12, 1.0 - 1e-12);
                -(-u.ln()).ln()
            })
            .collect()
    }

    fn hard_sample(&self, yhat: &[f64], noise: &[f64]) -> Vec<f64> {
        let l = self.arch.n_tags;
        let mut out = vec![0.0; yhat.len()];
        for (t, (p, g)) in yhat.chunks(l).zip(noise.chunks(l)).enumerate() {
            let scores: Vec<f64> = p.iter().zip(g).map(|(&pi, &gi)| clamp_prob(pi).ln() + gi).collect();
            out[t * l + argmax(&scores)] = 1.0;
        }
        out
    }

    fn relaxed_sample(&self, yhat: &[f64], noise: &[f64], tau: f64) -> Vec<f64> {
        if tau == 0.0 {
            return self.hard_sample(yhat, noise);
        }
        let l = self.arch.n_tags;
        yhat.chunks(l)
            .zip(noise.chunks(l))
            .flat_map(|(p, g)| {
                let z: Vec<f64> = p.iter().zip(g).map(|(&pi, &gi)| (clamp_prob(pi).ln() + gi) / tau).collect();
                softmax(&z)
            })
            .collect()
    }

    fn relaxed_sample_backward(&self, yhat: &[f64], noise: &[f64], tau: f64, d_sample: &[f64]) -> Vec<f64> {
        if tau == 0.0 {
            return vec![0.0; yhat.len()];
        }
        let l = self.arch.n_tags;
        let r = self.relaxed_sample(yhat, noise, tau);
        let mut out = vec![0.0; yhat.len()];
        for t in 0..yhat.len() / l {
            let span = t * l..(t + 1) * l;
            let (rt, dt) = (&r[span.clone()], &d_sample[span.clone()]);
            let inner: f64 = rt.iter().zip(dt).map(|(a, b)| a * b).sum();
            for j in 0..l {
                let p = yhat[t * l + j];
                if !is_clamped(p) {
                    out[t * l + j] = rt[j] * (dt[j] - inner) / (tau * p);
                }
            }
        }
        out
    }

    fn decode(&self, yhat: &[f64]) -> Vec<f64> {
        let l = self.arch.n_tags;
        let mut out = vec![0.0; yhat.len()];
        for (t, row) in yhat.chunks(l).enumerate() {
            out[t * l + argmax(row)] = 1.0;
        }
        out
    }

    fn score(&self, predictions: &[Vec<f64>], golds: &[Vec<f64>]) -> Result<Scores> {
        let l = self.arch.n_tags;
        let to_tags = |v: &Vec<f64>| v.chunks(l).map(argmax).collect::<Vec<usize>>();
        let p: Vec<Vec<usize>> = predictions.iter().map(to_tags).collect();
        let g: Vec<Vec<usize>> = golds.iter().map(to_tags).collect();
        Ok(Scores::Sequence { token_accuracy: token_accuracy(&p, &g)? })
    }
}

/// First index of the maximum.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn family(v: usize, l: usize) -> SeqFamily {
        SeqFamily::new(SeqArch {
            vocab_size: v,
            n_tags: l,
            embed_dim: 3,
            infer_hidden: vec![4],
            feature_hidden: vec![4],
            feature_dim: 2,
        })
        .unwrap()
    }

    fn sentence(tokens: &[usize], tags: &[usize]) -> SeqExample {
        SeqExample { tokens: tokens.to_vec(), tags: tags.to_vec(), extra: vec![vec![]; tokens.len()] }
    }

    #[test]
    fn zero_theta_is_uniform() {
        let fam = family(5, 4);
        let theta = ParamVector::zeros(fam.theta_layout().clone());
        let (y, _) = fam.infer(&theta, &sentence(&[1, 2, 3], &[0, 1, 2])).unwrap();
        assert_eq!(y.len(), 12);
        assert!(y.iter().all(|&p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn outputs_are_simplex_rows() {
        let fam = family(5, 3);
        let (theta, _) = fam.init_params(3);
        let (y, _) = fam.infer(&theta, &sentence(&[4, 0, 2, 1], &[0, 1, 2, 0])).unwrap();
        for row in y.chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }

    #[test]
    fn energy_examples() {
        let fam = family(3, 2);
        let mut phi = ParamVector::zeros(fam.phi_layout().clone());
        let x = sentence(&[1, 2], &[0, 1]);
        let feats = fam.features(&phi, &x).unwrap();
        let y = [1.0, 0.0, 0.0, 1.0];
        assert_eq!(fam.energy(&phi, &feats, &y).unwrap(), 0.0);
        phi.segment_mut("energy.W").unwrap().copy_from_slice(&[0.0, 1.0, 0.0, 0.0]);
        assert_eq!(fam.energy(&phi, &feats, &y).unwrap(), 1.0);
    }

    #[test]
    fn single_position_is_unary_only() {
        let fam = family(3, 2);
        let (_, mut phi) = fam.init_params(1);
        let x = sentence(&[2], &[1]);
        let feats = fam.features(&phi, &x).unwrap();
        let before = fam.energy(&phi, &feats, &[0.3, 0.7]).unwrap();
        phi.segment_mut("energy.W").unwrap().iter_mut().for_each(|w| *w += 10.0);
        assert_eq!(fam.energy(&phi, &feats, &[0.3, 0.7]).unwrap(), before);
    }

    #[test]
    fn empty_sequence() {
        let fam = family(3, 2);
        let (theta, phi) = fam.init_params(0);
        let x = sentence(&[], &[]);
        assert!(matches!(fam.infer(&theta, &x), Err(Error::EmptySequence)));
        assert!(matches!(fam.features(&phi, &x), Err(Error::EmptySequence)));
    }

    #[test]
    fn one_hot_energy_equals_path_score() {
        for (t_len, l) in [(1, 2), (3, 3), (5, 4), (4, 2)] {
            let fam = family(6, l);
            let (_, phi) = fam.init_params(t_len as u64);
            let tokens: Vec<usize> = (0..t_len).map(|t| (t * 5 + 1) % 6).collect();
            let x = sentence(&tokens, &vec![0; t_len]);
            let feats = fam.features(&phi, &x).unwrap();
            let u = phi.segment("energy.U").unwrap();
            let w = phi.segment("energy.W").unwrap();
            // unary[t][j] = U_jᵀ b(x, t)
            let unary: Vec<Vec<f64>> = (0..t_len)
                .map(|t| (0..l).map(|j| (0..2).map(|k| u[j * 2 + k] * feats.output(t)[k]).sum()).collect())
                .collect();
            for code in 0..l.pow(t_len as u32) {
                let path: Vec<usize> = (0..t_len).map(|t| code / l.pow(t as u32) % l).collect();
                let mut score: f64 = path.iter().enumerate().map(|(t, &j)| unary[t][j]).sum();
                for t in 1..t_len {
                    score += w[path[t - 1] * l + path[t]];
                }
                let mut y = vec![0.0; t_len * l];
                for (t, &j) in path.iter().enumerate() {
                    y[t * l + j] = 1.0;
                }
                let e = fam.energy(&phi, &feats, &y).unwrap();
                assert!((e - score).abs() < 1e-12, "path {path:?}: {e} vs {score}");
            }
        }
    }

    #[test]
    fn label_gradient_matches_finite_differences() {
        let fam = family(4, 3);
        let (_, phi) = fam.init_params(2);
        let x = sentence(&[1, 3, 2], &[0, 1, 2]);
        let feats = fam.features(&phi, &x).unwrap();
        let y: Vec<f64> = (0..9).map(|i| 0.1 + 0.08 * i as f64).collect();
        let mut g = vec![0.0; 9];
        fam.energy_backward(&phi, &feats, &y, 1.0, None, Some(&mut g)).unwrap();
        let h = 1e-5;
        for j in 0..9 {
            let (mut p, mut m) = (y.clone(), y.clone());
            p[j] += h;
            m[j] -= h;
            let fd = (fam.energy(&phi, &feats, &p).unwrap() - fam.energy(&phi, &feats, &m).unwrap()) / (2.0 * h);
            assert!((fd - g[j]).abs() <= 1e-5 * g[j].abs().max(1.0));
        }
    }

    #[test]
    fn gumbel_relaxation_approaches_argmax() {
        let fam = family(2, 3);
        let yhat = [0.2, 0.5, 0.3, 0.6, 0.3, 0.1];
        let noise = [0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        assert_eq!(fam.hard_sample(&yhat, &noise), vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        let soft = fam.relaxed_sample(&yhat, &noise, 1e-2);
        assert!(soft.iter().zip(fam.hard_sample(&yhat, &noise)).all(|(a, b)| (a - b).abs() < 1e-3));
    }
}
