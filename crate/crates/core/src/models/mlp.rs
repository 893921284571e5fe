use rand::Rng;

use crate::tensor::{gemv, gemv_t_acc, outer_acc, LayoutBuilder};

/// Feed-forward net with `tanh` hidden layers and a linear output layer.
///
/// The net does not own its weights: it records where its segments live in
/// a flat parameter buffer and reads them on each call.
#[derive(Clone, Debug)]
pub struct Mlp {
    widths: Vec<usize>,
    // (weight offset, bias offset) per layer
    slots: Vec<(usize, usize)>,
}

/// Activations of one forward pass: `acts[0]` is the input, `acts[l]` the
/// output of layer `l`.
#[derive(Clone, Debug)]
pub struct MlpTrace {
    pub acts: Vec<Vec<f64>>,
}

impl MlpTrace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace has at least the input")
    }
}

impl Mlp {
    /// Registers segments `{name}.w{l}` (out × in) and `{name}.b{l}` for each layer.
    pub fn declare(builder: &mut LayoutBuilder, name: &str, widths: &[usize]) -> Mlp {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        let slots = widths
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let wo = builder.push(&format!("{name}.w{l}"), &[w[1], w[0]]);
                let bo = builder.push(&format!("{name}.b{l}"), &[w[1]]);
                (wo, bo)
            })
            .collect();
        Mlp { widths: widths.to_vec(), slots }
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn forward(&self, params: &[f64], x: &[f64]) -> MlpTrace {
        assert_eq!(x.len(), self.input_dim(), "MLP input width");
        let n_layers = self.slots.len();
        let mut acts = Vec::with_capacity(n_layers + 1);
        acts.push(x.to_vec());
        for (l, &(wo, bo)) in self.slots.iter().enumerate() {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let mut z = params[bo..bo + fan_out].to_vec();
            let mut wx = vec![0.0; fan_out];
            gemv(&params[wo..wo + fan_in * fan_out], fan_out, fan_in, &acts[l], &mut wx);
            for (zi, v) in z.iter_mut().zip(wx) {
                *zi += v;
            }
            if l + 1 < n_layers {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(z);
        }
        MlpTrace { acts }
    }

    /// Accumulates parameter gradients into `grad` (same layout as `params`)
    /// and optionally the input gradient into `d_input`.
    pub fn backward(
        &self,
        params: &[f64],
        trace: &MlpTrace,
        d_out: &[f64],
        grad: &mut [f64],
        d_input: Option<&mut [f64]>,
    ) {
        assert_eq!(d_out.len(), self.output_dim());
        let mut delta = d_out.to_vec();
        for l in (0..self.slots.len()).rev() {
            let (wo, bo) = self.slots[l];
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            outer_acc(&mut grad[wo..wo + fan_in * fan_out], 1.0, &delta, &trace.acts[l]);
            for (g, d) in grad[bo..bo + fan_out].iter_mut().zip(&delta) {
                *g += d;
            }
            if l == 0 && d_input.is_none() {
                break;
            }
            let mut prev = vec![0.0; fan_in];
            gemv_t_acc(&params[wo..wo + fan_in * fan_out], fan_out, fan_in, &delta, &mut prev);
            if l > 0 {
                for (p, a) in prev.iter_mut().zip(&trace.acts[l]) {
                    *p *= 1.0 - a * a;
                }
            }
            delta = prev;
        }
        if let Some(dx) = d_input {
            for (o, d) in dx.iter_mut().zip(&delta) {
                *o += d;
            }
        }
    }

    /// Symmetric uniform init `U(−r, r)`, `r = sqrt(6 / (fan_in + fan_out))`; zero biases.
    pub fn init<R: Rng + ?Sized>(&self, params: &mut [f64], rng: &mut R) {
        for (l, &(wo, bo)) in self.slots.iter().enumerate() {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let r = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in &mut params[wo..wo + fan_in * fan_out] {
                *w = rng.random_range(-r..=r);
            }
            params[bo..bo + fan_out].iter_mut().for_each(|b| *b = 0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Layout;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn backward_matches_finite_differences() {
        let mut b = Layout::builder();
        let net = Mlp::declare(&mut b, "net", &[3, 4, 2]);
        let layout = b.build();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = vec![0.0; layout.len()];
        net.init(&mut params, &mut rng);
        params.iter_mut().enumerate().for_each(|(i, p)| *p += 0.01 * i as f64);
        let x = [0.3, -0.8, 1.1];
        let upstream = [0.7, -1.3];
        let loss = |p: &[f64], x: &[f64]| -> f64 {
            let out = net.forward(p, x);
            out.output().iter().zip(&upstream).map(|(a, b)| a * b).sum()
        };
        let trace = net.forward(&params, &x);
        let mut grad = vec![0.0; params.len()];
        let mut dx = vec![0.0; 3];
        net.backward(&params, &trace, &upstream, &mut grad, Some(&mut dx));
        let h = 1e-6;
        for i in 0..params.len() {
            let mut pp = params.clone();
            pp[i] += h;
            let mut pm = params.clone();
            pm[i] -= h;
            let fd = (loss(&pp, &x) - loss(&pm, &x)) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-7, "param {i}: {fd} vs {}", grad[i]);
        }
        for i in 0..3 {
            let mut xp = x;
            xp[i] += h;
            let mut xm = x;
            xm[i] -= h;
            let fd = (loss(&params, &xp) - loss(&params, &xm)) / (2.0 * h);
            assert!((fd - dx[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn single_linear_layer_is_affine() {
        let mut b = Layout::builder();
        let net = Mlp::declare(&mut b, "lin", &[2, 2]);
        let params = vec![1.0, 0.0, 0.0, 1.0, 0.5, -0.5];
        assert_eq!(net.forward(&params, &[2.0, 3.0]).output(), &[2.5, 2.5]);
    }
}
