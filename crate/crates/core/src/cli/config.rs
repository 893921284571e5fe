use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::SynthSpec;
use crate::trainer::TrainConfig;
use crate::{Error, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Mlc,
    Seq,
}

/// Hidden sizes of a multi-label model; input and label counts come from the data.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlcModelConfig {
    #[serde(default)]
    pub infer_hidden: Vec<usize>,
    #[serde(default)]
    pub feature_hidden: Vec<usize>,
    pub feature_dim: usize,
    pub global_hidden: usize,
}

/// Sizes of a sequence model; vocabulary and tag set come from the training file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeqModelConfig {
    pub embed_dim: usize,
    #[serde(default)]
    pub infer_hidden: Vec<usize>,
    #[serde(default)]
    pub feature_hidden: Vec<usize>,
    pub feature_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelConfig {
    Mlc(MlcModelConfig),
    Seq(SeqModelConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSources {
    pub train: PathBuf,
    #[serde(default)]
    pub valid: Option<PathBuf>,
    #[serde(default)]
    pub test: Option<PathBuf>,
}

/// Generator settings for planted-coupling multi-label data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_labels: usize,
    pub n_features: usize,
    pub n_examples: usize,
    pub seed: u64,
    #[serde(default = "default_positive")]
    pub positive_coupling: f64,
    #[serde(default = "default_negative")]
    pub negative_coupling: f64,
    #[serde(default = "default_weight_scale")]
    pub weight_scale: f64,
    #[serde(default = "default_label_bias")]
    pub label_bias: f64,
    #[serde(default = "default_sweeps")]
    pub gibbs_sweeps: usize,
}

fn default_positive() -> f64 {
    1.5
}
fn default_negative() -> f64 {
    -1.0
}
fn default_weight_scale() -> f64 {
    1.5
}
fn default_label_bias() -> f64 {
    -1.0
}
fn default_sweeps() -> usize {
    20
}

impl SynthConfig {
    pub fn planted(n_labels: usize, n_features: usize, n_examples: usize, seed: u64) -> Self {
        SynthConfig {
            n_labels,
            n_features,
            n_examples,
            seed,
            positive_coupling: default_positive(),
            negative_coupling: default_negative(),
            weight_scale: default_weight_scale(),
            label_bias: default_label_bias(),
            gibbs_sweeps: default_sweeps(),
        }
    }

    pub fn spec(&self) -> SynthSpec {
        SynthSpec {
            n_labels: self.n_labels,
            n_features: self.n_features,
            n_examples: self.n_examples,
            coupling: SynthSpec::planted_coupling(self.n_labels, self.positive_coupling, self.negative_coupling),
            weight_scale: self.weight_scale,
            label_bias: self.label_bias,
            gibbs_sweeps: self.gibbs_sweeps,
            seed: self.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    /// Separate files; paths are relative to the config file.
    Files(FileSources),
    /// Generated data, split into train/valid/test by `split` fractions.
    Synth { synth: SynthConfig, split: [f64; 3] },
}

/// A training run as described by a JSON file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub task: Task,
    pub model: ModelConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl RunConfig {
    /// Parses and validates; relative data paths are resolved against `base`.
    pub fn from_json(text: &str, base: &Path) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(text)?;
        // Pick the model schema by task so unknown model keys are rejected.
        let task: Task = raw
            .get("task")
            .cloned()
            .map(serde_json::from_value)
            .transpose()?
            .ok_or_else(|| Error::invalid("missing field `task`"))?;
        let mut raw = raw;
        if let Some(m) = raw.get_mut("model") {
            let model = match task {
                Task::Mlc => ModelConfig::Mlc(serde_json::from_value(m.clone())?),
                Task::Seq => ModelConfig::Seq(serde_json::from_value(m.clone())?),
            };
            *m = serde_json::to_value(model)?;
        }
        let mut cfg: RunConfig = serde_json::from_value(raw)?;
        cfg.model = match (task, &cfg.model) {
            (Task::Mlc, ModelConfig::Seq(_)) | (Task::Seq, ModelConfig::Mlc(_)) => {
                return Err(Error::invalid("model section does not match task"))
            }
            _ => cfg.model,
        };
        if let DataConfig::Files(f) = &mut cfg.data {
            for p in [Some(&mut f.train), f.valid.as_mut(), f.test.as_mut()].into_iter().flatten() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::invalid(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        self.train.validate()?;
        match &self.data {
            DataConfig::Synth { synth, split } => {
                if self.task != Task::Mlc {
                    return Err(Error::invalid("synthetic data is multi-label only"));
                }
                synth.spec().validate()?;
                if split.iter().any(|f| f.is_nan() || *f < 0.0) || split.iter().sum::<f64>() > 1.0 + 1e-9 || split[0] == 0.0 {
                    return Err(Error::invalid("split must be non-negative fractions summing to at most 1"));
                }
            }
            DataConfig::Files(_) => {}
        }
        let widths_ok = match &self.model {
            ModelConfig::Mlc(m) => {
                m.feature_dim > 0 && m.global_hidden > 0 && !m.infer_hidden.contains(&0) && !m.feature_hidden.contains(&0)
            }
            ModelConfig::Seq(m) => {
                m.embed_dim > 0 && m.feature_dim > 0 && !m.infer_hidden.contains(&0) && !m.feature_hidden.contains(&0)
            }
        };
        if !widths_ok {
            return Err(Error::invalid("model widths must be positive"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "version": 1,
        "task": "mlc",
        "model": {"feature_dim": 4, "global_hidden": 3},
        "data": {"synth": {"synth": {"n_labels": 4, "n_features": 5, "n_examples": 30, "seed": 1},
                           "split": [0.8, 0.1, 0.1]}},
        "train": {"t_inner": 2, "t_outer": 3, "eta_inner": 0.1, "eta_outer": 0.1, "lambda": 1.0,
                  "primary": {"kind": "cd", "negatives": 2, "temperature": 0.5}, "seed": 0}
    }"#;

    #[test]
    fn parses_minimal_config() {
        let cfg = RunConfig::from_json(MINIMAL, Path::new(".")).unwrap();
        assert_eq!(cfg.task, Task::Mlc);
        assert_eq!(cfg.hash(), cfg.clone().hash());
        assert_eq!(cfg.hash().len(), 64);
    }

    #[test]
    fn rejects_unknown_and_mismatched_keys() {
        let bad_model = MINIMAL.replace("\"global_hidden\": 3", "\"global_hidden\": 3, \"embed_dim\": 2");
        assert!(RunConfig::from_json(&bad_model, Path::new(".")).is_err());
        let bad_top = MINIMAL.replace("\"version\": 1,", "\"version\": 1, \"extra\": true,");
        assert!(RunConfig::from_json(&bad_top, Path::new(".")).is_err());
        let bad_version = MINIMAL.replace("\"version\": 1", "\"version\": 2");
        assert!(RunConfig::from_json(&bad_version, Path::new(".")).is_err());
        let seq_synth = MINIMAL.replace("\"task\": \"mlc\"", "\"task\": \"seq\"");
        assert!(RunConfig::from_json(&seq_synth, Path::new(".")).is_err());
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let text = MINIMAL.replace(
            r#"{"synth": {"synth": {"n_labels": 4, "n_features": 5, "n_examples": 30, "seed": 1},
                           "split": [0.8, 0.1, 0.1]}}"#,
            r#"{"files": {"train": "train.txt"}}"#,
        );
        let cfg = RunConfig::from_json(&text, Path::new("/data/run")).unwrap();
        match cfg.data {
            DataConfig::Files(f) => assert_eq!(f.train, PathBuf::from("/data/run/train.txt")),
            other => panic!("{other:?}"),
        }
    }
}
