//! Training loops.
//!
//! Each outer iteration takes a batch, runs `t_inner` descent steps on the
//! auxiliary loss for θ (warm-started from the previous iteration), and then
//! makes one φ step: along the implicit hypergradient of the primary loss
//! ([`Regime::Implicit`]), along its explicit part only
//! ([`Regime::Alternating`]), or not at all ([`Regime::Mbce`]).

mod config;
mod metrics;
mod run;

pub use config::{Optimizer, Regime, TrainConfig, MOMENTUM};
pub use metrics::{read_metrics_csv, write_metrics_csv, MetricsRecord, METRICS_COLUMNS, METRICS_MAGIC};
pub use run::{
    train, train_alternating, train_implicit, train_mbce, Abort, NoopObserver, Observer, Sgd, TrainOutcome, Trainer,
};

use rand::RngCore;

use crate::losses::{AuxLoss, PrimaryLoss, Scores};
use crate::models::{evaluate, StructuredFamily};
use crate::tensor::{ParamVector, ScalarFn};
use crate::Result;

/// What the trainer needs from a bi-level problem: parameter initialization,
/// the two losses bound to a batch, and a validation score.
pub trait BilevelProblem: Sync {
    type Example: Sync;

    fn init_params(&self, seed: u64) -> (ParamVector, ParamVector);

    /// `L_Aux` on `batch` with energy weight `lambda`.
    fn aux_loss<'a>(&'a self, batch: Vec<&'a Self::Example>, lambda: f64) -> Box<dyn ScalarFn + 'a>;

    /// `L_Prim` on `batch`; any sampling draws from `rng`.
    fn prim_loss<'a>(
        &'a self,
        batch: Vec<&'a Self::Example>,
        primary: &PrimaryLoss,
        rng: &mut dyn RngCore,
    ) -> Result<Box<dyn ScalarFn + 'a>>;

    fn evaluate(&self, theta: &ParamVector, data: &[Self::Example]) -> Result<Scores>;
}

impl<F: StructuredFamily> BilevelProblem for F {
    type Example = F::Example;

    fn init_params(&self, seed: u64) -> (ParamVector, ParamVector) {
        StructuredFamily::init_params(self, seed)
    }

    fn aux_loss<'a>(&'a self, batch: Vec<&'a F::Example>, lambda: f64) -> Box<dyn ScalarFn + 'a> {
        Box::new(AuxLoss::new(self, batch, lambda))
    }

    fn prim_loss<'a>(
        &'a self,
        batch: Vec<&'a F::Example>,
        primary: &PrimaryLoss,
        rng: &mut dyn RngCore,
    ) -> Result<Box<dyn ScalarFn + 'a>> {
        primary.bind(self, batch, rng)
    }

    fn evaluate(&self, theta: &ParamVector, data: &[F::Example]) -> Result<Scores> {
        evaluate(self, theta, data)
    }
}
