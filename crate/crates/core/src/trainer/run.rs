// Aborts are rare and carry the partial metrics, so they are returned unboxed.
#![allow(clippy::result_large_err)]

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{BilevelProblem, MetricsRecord, Optimizer, Regime, TrainConfig, MOMENTUM};
use crate::implicit::{biased_grad_phi, implicit_grad_phi};
use crate::losses::Scores;
use crate::tensor::{all_finite, grad, norm, Group, ParamVector};
use crate::{Error, Result};

// Independent random streams derived from the run seed.
const STREAM_BATCHES: u64 = 1;
const STREAM_NEGATIVES: u64 = 2;
const STREAM_OUTER_BATCHES: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Plain or heavy-ball gradient descent on a flat parameter vector.
#[derive(Clone, Debug)]
pub struct Sgd {
    momentum: Option<f64>,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(kind: Optimizer, len: usize) -> Self {
        let momentum = match kind {
            Optimizer::Sgd => None,
            Optimizer::Momentum => Some(MOMENTUM),
        };
        Sgd { momentum, velocity: vec![0.0; if momentum.is_some() { len } else { 0 }] }
    }

    pub fn step(&mut self, params: &mut ParamVector, grad: &[f64], lr: f64) -> Result<()> {
        match self.momentum {
            None => params.add_scaled(-lr, grad),
            Some(mu) => {
                for (v, g) in self.velocity.iter_mut().zip(grad) {
                    *v = mu * *v + g;
                }
                params.add_scaled(-lr, &self.velocity)
            }
        }
    }
}

/// Callbacks fired by the training loop, for instrumentation.
pub trait Observer {
    fn on_outer_begin(&mut self, _outer_iter: usize, _theta: &ParamVector, _phi: &ParamVector) {}
    fn on_theta_update(&mut self, _outer_iter: usize, _theta: &ParamVector) {}
    fn on_phi_update(&mut self, _outer_iter: usize, _phi: &ParamVector) {}
    fn on_outer_end(&mut self, _record: &MetricsRecord, _theta: &ParamVector, _phi: &ParamVector) {}
}

pub struct NoopObserver;

impl Observer for NoopObserver {}

/// A run that stopped on a numeric failure, with everything recorded so far.
#[derive(Debug, Serialize)]
pub struct Abort {
    #[serde(serialize_with = "display")]
    pub error: Error,
    pub outer_iter: usize,
    pub phase: &'static str,
    pub theta_norm: f64,
    pub phi_norm: f64,
    pub last_loss: Option<f64>,
    #[serde(skip)]
    pub partial: Vec<MetricsRecord>,
}

fn display<S: serde::Serializer>(e: &Error, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(e)
}

impl std::fmt::Display for Abort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "training aborted at outer iteration {} ({}): {} [‖θ‖={:e}, ‖φ‖={:e}",
            self.outer_iter, self.phase, self.error, self.theta_norm, self.phi_norm
        )?;
        if let Some(l) = self.last_loss {
            write!(f, ", loss={l:e}")?;
        }
        write!(f, "]")
    }
}

impl std::error::Error for Abort {}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the selected model (best validation score when
    /// validation ran, otherwise the last iterate).
    pub theta: ParamVector,
    pub phi: ParamVector,
    pub metrics: Vec<MetricsRecord>,
    pub best_outer_iter: Option<usize>,
    pub best_valid: Option<Scores>,
    pub stopped_early: bool,
    pub theta_updates: usize,
    pub phi_updates: usize,
    pub wall_seconds: f64,
}

/// Cycles through the training set in seeded per-epoch permutations.
struct Batches {
    order: Vec<usize>,
    pos: usize,
    size: usize,
    rng: ChaCha8Rng,
}

impl Batches {
    fn new(n: usize, size: usize, rng: ChaCha8Rng) -> Self {
        Batches { order: (0..n).collect(), pos: n, size, rng }
    }

    fn next(&mut self) -> Vec<usize> {
        if self.pos >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let end = (self.pos + self.size).min(self.order.len());
        let batch = self.order[self.pos..end].to_vec();
        self.pos = end;
        batch
    }
}

/// Training state: parameters, optimizer state and counters. Use
/// [`Trainer::outer_step`] for single steps or [`train`] for a full run.
pub struct Trainer<'p, P: BilevelProblem> {
    problem: &'p P,
    data: &'p [P::Example],
    cfg: TrainConfig,
    regime: Regime,
    pub theta: ParamVector,
    pub phi: ParamVector,
    theta_opt: Sgd,
    phi_opt: Sgd,
    batches: Batches,
    outer_batches: ChaCha8Rng,
    negatives: ChaCha8Rng,
    pub outer_iter: usize,
    pub theta_updates: usize,
    pub phi_updates: usize,
}

type StepResult<T> = std::result::Result<T, (Error, &'static str, Option<f64>)>;

impl<'p, P: BilevelProblem> Trainer<'p, P> {
    pub fn new(problem: &'p P, data: &'p [P::Example], cfg: &TrainConfig, regime: Regime) -> Result<Self> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        let (theta, phi) = problem.init_params(cfg.seed);
        Ok(Trainer {
            problem,
            data,
            regime,
            theta_opt: Sgd::new(cfg.optimizer, theta.len()),
            phi_opt: Sgd::new(cfg.optimizer, phi.len()),
            theta,
            phi,
            batches: Batches::new(data.len(), cfg.batch_size, stream(cfg.seed, STREAM_BATCHES)),
            outer_batches: stream(cfg.seed, STREAM_OUTER_BATCHES),
            negatives: stream(cfg.seed, STREAM_NEGATIVES),
            cfg: cfg.clone(),
            outer_iter: 0,
            theta_updates: 0,
            phi_updates: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    fn select(&self, idx: &[usize]) -> Vec<&'p P::Example> {
        idx.iter().map(|&i| &self.data[i]).collect()
    }

    /// `t_inner` descent steps on the auxiliary loss (plain likelihood for
    /// the MBCE regime) with φ fixed. Returns the loss after the last step.
    pub fn inner_loop(&mut self, batch: &[usize], observer: &mut dyn Observer) -> Result<f64> {
        self.inner(batch, observer).map_err(|(e, _, _)| e)
    }

    fn inner(&mut self, batch: &[usize], observer: &mut dyn Observer) -> StepResult<f64> {
        let lambda = if self.regime == Regime::Mbce { 0.0 } else { self.cfg.lambda };
        let aux = self.problem.aux_loss(self.select(batch), lambda);
        for _ in 0..self.cfg.t_inner {
            let g = grad(aux.as_ref(), Group::Theta, &self.theta, &self.phi).map_err(|e| (e, "inner", None))?;
            if !all_finite(&g) {
                let loss = aux.value(&self.theta, &self.phi).ok();
                return Err((Error::NonFinite("auxiliary-loss gradient".into()), "inner", loss));
            }
            self.theta_opt.step(&mut self.theta, &g, self.cfg.eta_inner).map_err(|e| (e, "inner", None))?;
            self.theta_updates += 1;
            observer.on_theta_update(self.outer_iter, &self.theta);
        }
        let loss = aux.value(&self.theta, &self.phi).map_err(|e| (e, "inner", None))?;
        if !loss.is_finite() {
            return Err((Error::NonFinite("auxiliary loss".into()), "inner", Some(loss)));
        }
        Ok(loss)
    }

    /// One outer iteration: inner loop, then at most one φ update.
    pub fn outer_step(&mut self, observer: &mut dyn Observer) -> Result<MetricsRecord> {
        self.outer(observer).map_err(|(e, _, _)| e)
    }

    fn outer(&mut self, observer: &mut dyn Observer) -> StepResult<MetricsRecord> {
        self.outer_iter += 1;
        let t = self.outer_iter;
        observer.on_outer_begin(t, &self.theta, &self.phi);
        let batch = self.batches.next();
        let aux_loss = self.inner(&batch, observer)?;

        let mut rec = MetricsRecord {
            outer_iter: t,
            theta_updates: 0,
            phi_updates: 0,
            aux_loss,
            prim_loss: 0.0,
            hypergrad_norm: 0.0,
            explicit_norm: 0.0,
            implicit_norm: 0.0,
            ihvp_residual: 0.0,
            aux_grad_norm: 0.0,
            valid: None,
        };

        if self.regime != Regime::Mbce {
            let outer_idx = if self.cfg.fresh_outer_batch {
                (0..batch.len()).map(|_| self.outer_batches.random_range(0..self.data.len())).collect()
            } else {
                batch.clone()
            };
            let fail = |e| (e, "outer", None);
            let prim = self
                .problem
                .prim_loss(self.select(&outer_idx), &self.cfg.primary, &mut self.negatives)
                .map_err(fail)?;
            rec.prim_loss = prim.value(&self.theta, &self.phi).map_err(fail)?;
            if !rec.prim_loss.is_finite() {
                return Err((Error::NonFinite("primary loss".into()), "outer", Some(rec.prim_loss)));
            }
            let step = match self.regime {
                Regime::Implicit => {
                    let aux = self.problem.aux_loss(self.select(&batch), self.cfg.lambda);
                    let report = implicit_grad_phi(prim.as_ref(), aux.as_ref(), &self.theta, &self.phi, &self.cfg.ihvp)
                        .map_err(fail)?;
                    rec.explicit_norm = norm(&report.explicit);
                    rec.implicit_norm = norm(&report.implicit);
                    rec.ihvp_residual = report.ihvp_residual;
                    rec.aux_grad_norm = report.aux_grad_norm;
                    report.total
                }
                _ => {
                    let g = biased_grad_phi(prim.as_ref(), &self.theta, &self.phi).map_err(fail)?;
                    rec.explicit_norm = norm(&g);
                    g
                }
            };
            rec.hypergrad_norm = norm(&step);
            if !all_finite(&step) {
                return Err((Error::NonFinite("energy update".into()), "outer", Some(rec.prim_loss)));
            }
            self.phi_opt.step(&mut self.phi, &step, self.cfg.eta_outer).map_err(fail)?;
            self.phi_updates += 1;
            observer.on_phi_update(t, &self.phi);
        }
        rec.theta_updates = self.theta_updates;
        rec.phi_updates = self.phi_updates;
        Ok(rec)
    }

    fn abort(&self, (error, phase, last_loss): (Error, &'static str, Option<f64>), partial: Vec<MetricsRecord>) -> Abort {
        Abort {
            error,
            outer_iter: self.outer_iter,
            phase,
            theta_norm: self.theta.norm(),
            phi_norm: self.phi.norm(),
            last_loss,
            partial,
        }
    }
}

/// Full run: `t_outer` outer iterations with periodic validation, early
/// stopping on the validation score, and restoration of the best iterate.
pub fn train<P: BilevelProblem>(
    problem: &P,
    train_data: &[P::Example],
    valid_data: &[P::Example],
    cfg: &TrainConfig,
    regime: Regime,
    observer: &mut dyn Observer,
) -> std::result::Result<TrainOutcome, Abort> {
    let start = Instant::now();
    let mut trainer = Trainer::new(problem, train_data, cfg, regime).map_err(|error| Abort {
        error,
        outer_iter: 0,
        phase: "setup",
        theta_norm: 0.0,
        phi_norm: 0.0,
        last_loss: None,
        partial: Vec::new(),
    })?;
    let mut metrics = Vec::with_capacity(cfg.t_outer);
    let mut best: Option<(f64, usize, ParamVector, ParamVector, Scores)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;

    for t in 1..=cfg.t_outer {
        let mut rec = match trainer.outer(observer) {
            Ok(r) => r,
            Err(e) => return Err(trainer.abort(e, metrics)),
        };
        let due = cfg.eval_every > 0 && (t % cfg.eval_every == 0 || t == cfg.t_outer);
        if due && !valid_data.is_empty() {
            let scores = match problem.evaluate(&trainer.theta, valid_data) {
                Ok(s) => s,
                Err(e) => return Err(trainer.abort((e, "eval", None), metrics)),
            };
            rec.valid = Some(scores);
            if let Some(s) = scores.selection() {
                if best.as_ref().is_none_or(|b| s > b.0) {
                    best = Some((s, t, trainer.theta.clone(), trainer.phi.clone(), scores));
                    since_best = 0;
                } else {
                    since_best += 1;
                }
            }
        }
        observer.on_outer_end(&rec, &trainer.theta, &trainer.phi);
        metrics.push(rec);
        if cfg.patience.is_some_and(|p| since_best >= p) {
            stopped_early = true;
            break;
        }
    }

    let (theta_updates, phi_updates) = (trainer.theta_updates, trainer.phi_updates);
    let (theta, phi, best_outer_iter, best_valid) = match best {
        Some((_, t, theta, phi, s)) => (theta, phi, Some(t), Some(s)),
        None => (trainer.theta, trainer.phi, None, None),
    };
    Ok(TrainOutcome {
        theta,
        phi,
        metrics,
        best_outer_iter,
        best_valid,
        stopped_early,
        theta_updates,
        phi_updates,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn train_implicit<P: BilevelProblem>(
    problem: &P,
    train_data: &[P::Example],
    valid_data: &[P::Example],
    cfg: &TrainConfig,
) -> std::result::Result<TrainOutcome, Abort> {
    train(problem, train_data, valid_data, cfg, Regime::Implicit, &mut NoopObserver)
}

pub fn train_alternating<P: BilevelProblem>(
    problem: &P,
    train_data: &[P::Example],
    valid_data: &[P::Example],
    cfg: &TrainConfig,
) -> std::result::Result<TrainOutcome, Abort> {
    train(problem, train_data, valid_data, cfg, Regime::Alternating, &mut NoopObserver)
}

pub fn train_mbce<P: BilevelProblem>(
    problem: &P,
    train_data: &[P::Example],
    valid_data: &[P::Example],
    cfg: &TrainConfig,
) -> std::result::Result<TrainOutcome, Abort> {
    train(problem, train_data, valid_data, cfg, Regime::Mbce, &mut NoopObserver)
}
