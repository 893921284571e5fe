use serde::{Deserialize, Serialize};

use crate::implicit::IhvpConfig;
use crate::losses::PrimaryLoss;
use crate::{Error, Result};

/// How θ and φ are updated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// θ descends `L_Aux`; φ follows the implicit hypergradient of `L_Prim`.
    Implicit,
    /// θ descends `L_Aux`; φ follows only the explicit `∂_φ L_Prim`.
    Alternating,
    /// θ descends the likelihood loss alone; φ is never used.
    Mbce,
}

impl Regime {
    pub fn name(&self) -> &'static str {
        match self {
            Regime::Implicit => "implicit",
            Regime::Alternating => "alternating",
            Regime::Mbce => "mbce",
        }
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "implicit" => Ok(Regime::Implicit),
            "alternating" => Ok(Regime::Alternating),
            "mbce" => Ok(Regime::Mbce),
            other => Err(Error::invalid(format!("unknown regime {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Sgd,
    /// Heavy-ball SGD with coefficient [`MOMENTUM`].
    Momentum,
}

pub const MOMENTUM: f64 = 0.9;

fn default_patience() -> Option<usize> {
    Some(10)
}

fn default_one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// θ updates per outer iteration.
    pub t_inner: usize,
    /// Outer iterations (φ updates for the bi-level regimes).
    pub t_outer: usize,
    pub eta_inner: f64,
    pub eta_outer: f64,
    /// Energy weight in the auxiliary loss.
    pub lambda: f64,
    pub primary: PrimaryLoss,
    #[serde(default)]
    pub ihvp: IhvpConfig,
    #[serde(default = "default_one")]
    pub batch_size: usize,
    pub seed: u64,
    /// Validate every this many outer iterations (and after the last); 0 disables.
    #[serde(default = "default_one")]
    pub eval_every: usize,
    /// Evaluations without improvement before stopping; `null` disables.
    #[serde(default = "default_patience")]
    pub patience: Option<usize>,
    #[serde(default)]
    pub optimizer: Optimizer,
    /// Draw the primary-loss batch independently of the inner-loop batch.
    #[serde(default)]
    pub fresh_outer_batch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            t_inner: 5,
            t_outer: 100,
            eta_inner: 0.1,
            eta_outer: 0.01,
            lambda: 1.0,
            primary: PrimaryLoss::Cd { negatives: 5, temperature: 0.5 },
            ihvp: IhvpConfig::default(),
            batch_size: 1,
            seed: 0,
            eval_every: 1,
            patience: default_patience(),
            optimizer: Optimizer::Sgd,
            fresh_outer_batch: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_inner == 0 || self.t_outer == 0 || self.batch_size == 0 {
            return Err(Error::invalid("t_inner, t_outer and batch_size must be at least 1"));
        }
        for (name, v) in [("eta_inner", self.eta_inner), ("eta_outer", self.eta_outer), ("lambda", self.lambda)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if self.patience == Some(0) {
            return Err(Error::invalid("patience must be at least 1 (or null)"));
        }
        self.primary.validate()?;
        self.ihvp.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let cfg = TrainConfig::default();
        cfg.validate().unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<TrainConfig>(&json).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_values() {
        let bad = [
            TrainConfig { t_inner: 0, ..Default::default() },
            TrainConfig { eta_outer: -1.0, ..Default::default() },
            TrainConfig { lambda: f64::NAN, ..Default::default() },
            TrainConfig { patience: Some(0), ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
        let unknown = r#"{"t_inner":1,"t_outer":1,"eta_inner":0.1,"eta_outer":0.1,"lambda":1,
            "primary":{"kind":"ssvm"},"seed":0,"bogus":1}"#;
        assert!(serde_json::from_str::<TrainConfig>(unknown).is_err());
    }

    #[test]
    fn regime_names() {
        for r in [Regime::Implicit, Regime::Alternating, Regime::Mbce] {
            assert_eq!(r.name().parse::<Regime>().unwrap(), r);
        }
        assert!("sgd".parse::<Regime>().is_err());
    }
}
