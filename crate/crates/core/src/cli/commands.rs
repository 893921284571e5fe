use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use super::checkpoint::{Architecture, Checkpoint};
use super::config::{DataConfig, ModelConfig, RunConfig};
use super::{gradcheck as checks, Failure, GlobalOpts, EXIT_CHECK_FAILED, EXIT_NUMERIC, EXIT_OK};
use crate::analysis::analyze_energy_hessian;
use crate::data::{
    gen_synth, load_conll, load_conll_with_vocab, load_mlc, split, write_mlc, MlcDataset, SeqDataset, SynthSpec,
};
use crate::losses::Scores;
use crate::models::{evaluate, MlcArch, MlcFamily, SeqArch, SeqFamily, StructuredFamily};
use crate::tensor::Matrix;
use crate::trainer::{train as run_training, write_metrics_csv, Abort, MetricsRecord, NoopObserver, Regime};

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";

fn usage<E: std::fmt::Display>(context: impl std::fmt::Display) -> impl Fn(E) -> Failure {
    let context = context.to_string();
    move |e| Failure::usage(format!("{context}: {e}"))
}

/// Refuses to reuse an existing path unless `--force` is given.
fn check_fresh(path: &Path, force: bool) -> Result<(), Failure> {
    if path.exists() && !force {
        return Err(Failure::usage(format!("{} already exists (pass --force to overwrite)", path.display())));
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let file = File::create(path).map_err(usage(path.display()))?;
    serde_json::to_writer_pretty(BufWriter::new(file), value).map_err(usage(path.display()))
}

fn write_metrics(path: &Path, hash: &str, records: &[MetricsRecord]) -> Result<(), Failure> {
    let file = File::create(path).map_err(usage(path.display()))?;
    write_metrics_csv(BufWriter::new(file), hash, records).map_err(usage(path.display()))
}

/// Training data loaded and split, ready for a model family.
enum Loaded {
    Mlc { arch: MlcArch, train: MlcDataset, valid: MlcDataset, test: MlcDataset },
    Seq { arch: SeqArch, train: SeqDataset, valid: SeqDataset, test: SeqDataset },
}

fn same_shape(a: &MlcDataset, b: &MlcDataset, path: &Path) -> Result<(), Failure> {
    if (a.n_features, a.n_labels) != (b.n_features, b.n_labels) {
        return Err(Failure::usage(format!(
            "{}: {} features and {} labels, training data has {} and {}",
            path.display(),
            b.n_features,
            b.n_labels,
            a.n_features,
            a.n_labels
        )));
    }
    Ok(())
}

fn load_data(cfg: &RunConfig) -> Result<Loaded, Failure> {
    let read_err = |p: &Path| usage(p.display().to_string());
    match (&cfg.model, &cfg.data) {
        (ModelConfig::Mlc(m), data) => {
            let (train, valid, test) = match data {
                DataConfig::Synth { synth, split: fractions } => {
                    let all = gen_synth(&synth.spec()).map_err(usage("synthetic data"))?;
                    let parts = split(&all.examples, *fractions, synth.seed).map_err(usage("split"))?;
                    (all.with_examples(parts.train), all.with_examples(parts.valid), all.with_examples(parts.test))
                }
                DataConfig::Files(f) => {
                    let train = load_mlc(&f.train).map_err(read_err(&f.train))?;
                    let other = |p: &Option<PathBuf>| -> Result<MlcDataset, Failure> {
                        match p {
                            Some(p) => {
                                let d = load_mlc(p).map_err(read_err(p))?;
                                same_shape(&train, &d, p)?;
                                Ok(d)
                            }
                            None => Ok(train.with_examples(Vec::new())),
                        }
                    };
                    let (valid, test) = (other(&f.valid)?, other(&f.test)?);
                    (train, valid, test)
                }
            };
            let arch = MlcArch {
                n_features: train.n_features,
                n_labels: train.n_labels,
                infer_hidden: m.infer_hidden.clone(),
                feature_hidden: m.feature_hidden.clone(),
                feature_dim: m.feature_dim,
                global_hidden: m.global_hidden,
            };
            Ok(Loaded::Mlc { arch, train, valid, test })
        }
        (ModelConfig::Seq(m), DataConfig::Files(f)) => {
            let train = load_conll(&f.train).map_err(read_err(&f.train))?;
            let other = |p: &Option<PathBuf>| -> Result<SeqDataset, Failure> {
                match p {
                    Some(p) => load_conll_with_vocab(p, &train.vocab, &train.tags).map_err(read_err(p)),
                    None => Ok(train.with_examples(Vec::new())),
                }
            };
            let (valid, test) = (other(&f.valid)?, other(&f.test)?);
            let arch = SeqArch {
                vocab_size: train.vocab.len(),
                n_tags: train.tags.len(),
                embed_dim: m.embed_dim,
                infer_hidden: m.infer_hidden.clone(),
                feature_hidden: m.feature_hidden.clone(),
                feature_dim: m.feature_dim,
            };
            Ok(Loaded::Seq { arch, train, valid, test })
        }
        (ModelConfig::Seq(_), DataConfig::Synth { .. }) => Err(Failure::usage("synthetic data is multi-label only")),
    }
}

#[derive(Serialize)]
struct Summary<'a> {
    regime: &'a str,
    config_sha256: &'a str,
    seed: u64,
    outer_iterations: usize,
    best_outer_iter: Option<usize>,
    stopped_early: bool,
    theta_updates: usize,
    phi_updates: usize,
    valid: Option<Scores>,
    test: Option<Scores>,
    wall_seconds: f64,
}

struct TrainJob<'a> {
    out: &'a Path,
    hash: &'a str,
    cfg: &'a RunConfig,
    regime: Regime,
}

impl TrainJob<'_> {
    fn run<F: StructuredFamily>(
        &self,
        family: &F,
        arch: Architecture,
        train: &[F::Example],
        valid: &[F::Example],
        test: &[F::Example],
    ) -> Result<i32, Failure> {
        std::fs::create_dir_all(self.out).map_err(usage(self.out.display()))?;
        let stale = self.out.join(DIAGNOSTICS_FILE);
        if stale.exists() {
            std::fs::remove_file(&stale).map_err(usage(stale.display()))?;
        }
        let outcome = match run_training(family, train, valid, &self.cfg.train, self.regime, &mut NoopObserver) {
            Ok(o) => o,
            Err(abort) => return self.abort(abort),
        };
        let test_scores = if test.is_empty() {
            None
        } else {
            Some(evaluate(family, &outcome.theta, test).map_err(Failure::numeric)?)
        };
        Checkpoint::new(arch, outcome.theta.clone(), outcome.phi.clone(), self.hash, self.regime.name())
            .save(&self.out.join(CHECKPOINT_FILE))
            .map_err(usage("checkpoint"))?;
        write_metrics(&self.out.join(METRICS_FILE), self.hash, &outcome.metrics)?;
        let summary = Summary {
            regime: self.regime.name(),
            config_sha256: self.hash,
            seed: self.cfg.train.seed,
            outer_iterations: outcome.metrics.len(),
            best_outer_iter: outcome.best_outer_iter,
            stopped_early: outcome.stopped_early,
            theta_updates: outcome.theta_updates,
            phi_updates: outcome.phi_updates,
            valid: outcome.best_valid,
            test: test_scores,
            wall_seconds: outcome.wall_seconds,
        };
        write_json(&self.out.join(SUMMARY_FILE), &summary)?;
        println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
        Ok(EXIT_OK)
    }

    fn abort(&self, abort: Abort) -> Result<i32, Failure> {
        write_metrics(&self.out.join(METRICS_FILE), self.hash, &abort.partial)?;
        write_json(&self.out.join(DIAGNOSTICS_FILE), &abort)?;
        eprintln!("error: {abort}");
        eprintln!("diagnostics written to {}", self.out.join(DIAGNOSTICS_FILE).display());
        Ok(EXIT_NUMERIC)
    }
}

pub fn train(g: &GlobalOpts, config: &Path, regime: Regime) -> Result<i32, Failure> {
    let mut cfg = RunConfig::load(config).map_err(usage(config.display()))?;
    if let Some(seed) = g.seed {
        cfg.train.seed = seed;
    }
    let out = g
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .ok_or_else(|| Failure::usage("no output directory (set `output` in the config or pass --out)"))?;
    check_fresh(&out, g.force)?;
    if out.exists() && !out.is_dir() {
        return Err(Failure::usage(format!("{} is not a directory", out.display())));
    }
    let hash = cfg.hash();
    let loaded = load_data(&cfg)?;
    let job = TrainJob { out: &out, hash: &hash, cfg: &cfg, regime };
    match loaded {
        Loaded::Mlc { arch, train, valid, test } => {
            let fam = MlcFamily::new(arch.clone()).map_err(usage("model"))?;
            job.run(&fam, Architecture::Mlc { arch }, &train.examples, &valid.examples, &test.examples)
        }
        Loaded::Seq { arch, train, valid, test } => {
            let fam = SeqFamily::new(arch.clone()).map_err(usage("model"))?;
            let desc = Architecture::Seq { arch, vocab: train.vocab.clone(), tags: train.tags.clone() };
            job.run(&fam, desc, &train.examples, &valid.examples, &test.examples)
        }
    }
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, Failure> {
    Checkpoint::load(path).map_err(usage(path.display()))
}

fn load_mlc_for(arch: &MlcArch, path: &Path) -> Result<MlcDataset, Failure> {
    let data = load_mlc(path).map_err(usage(path.display()))?;
    if (data.n_features, data.n_labels) != (arch.n_features, arch.n_labels) {
        return Err(Failure::usage(format!(
            "{}: {} features and {} labels, model expects {} and {}",
            path.display(),
            data.n_features,
            data.n_labels,
            arch.n_features,
            arch.n_labels
        )));
    }
    Ok(data)
}

pub fn eval(checkpoint: &Path, data: &Path) -> Result<i32, Failure> {
    let ck = load_checkpoint(checkpoint)?;
    let (n, scores) = match &ck.descriptor.architecture {
        Architecture::Mlc { arch } => {
            let fam = MlcFamily::new(arch.clone()).map_err(usage("checkpoint"))?;
            let d = load_mlc_for(arch, data)?;
            (d.len(), evaluate(&fam, &ck.theta, &d.examples).map_err(usage("evaluation"))?)
        }
        Architecture::Seq { arch, vocab, tags } => {
            let fam = SeqFamily::new(arch.clone()).map_err(usage("checkpoint"))?;
            let d = load_conll_with_vocab(data, vocab, tags).map_err(usage(data.display()))?;
            (d.len(), evaluate(&fam, &ck.theta, &d.examples).map_err(usage("evaluation"))?)
        }
    };
    println!("{}", serde_json::to_string(&json!({ "examples": n, "scores": scores })).unwrap());
    Ok(EXIT_OK)
}

pub fn gradcheck(g: &GlobalOpts) -> Result<i32, Failure> {
    if let Some(t) = g.tolerance {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Failure::usage(format!("--tolerance must be a non-negative number, got {t}")));
        }
    }
    let results = checks::run_default(g.tolerance).map_err(Failure::check)?;
    for r in &results {
        println!("{r}");
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} checks, {} failed", results.len(), failed);
    Ok(if failed == 0 { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn write_matrix_csv(path: &Path, m: &Matrix) -> Result<(), Failure> {
    let mut w = csv::Writer::from_path(path).map_err(usage(path.display()))?;
    for r in 0..m.rows() {
        w.write_record(m.row(r).iter().map(|v| format!("{v:e}"))).map_err(usage(path.display()))?;
    }
    w.flush().map_err(usage(path.display()))
}

pub fn analyze_hessian(g: &GlobalOpts, checkpoint: &Path, data: &Path) -> Result<i32, Failure> {
    let ck = load_checkpoint(checkpoint)?;
    let Architecture::Mlc { arch } = &ck.descriptor.architecture else {
        return Err(Failure::usage("Hessian analysis needs a multi-label checkpoint"));
    };
    if let Some(out) = &g.out {
        check_fresh(out, g.force)?;
    }
    let fam = MlcFamily::new(arch.clone()).map_err(usage("checkpoint"))?;
    let d = load_mlc_for(arch, data)?;
    let a = analyze_energy_hessian(&fam, &ck.phi, &d).map_err(usage("analysis"))?;
    let report = json!({
        "correlation": a.correlation.map_or(json!("n/a"), |c| json!(c)),
        "fd_max_abs_error": a.fd_max_abs_error,
        "examples": d.len(),
    });
    if let Some(out) = &g.out {
        std::fs::create_dir_all(out).map_err(usage(out.display()))?;
        write_matrix_csv(&out.join("hessian.csv"), &a.hessian)?;
        write_matrix_csv(&out.join("cooccurrence.csv"), &a.cooccurrence)?;
        write_json(&out.join("analysis.json"), &report)?;
    }
    println!("{report}");
    Ok(EXIT_OK)
}

pub fn synth(g: &GlobalOpts, labels: usize, features: usize, examples: usize, independent: bool) -> Result<i32, Failure> {
    let out = g.out.as_ref().ok_or_else(|| Failure::usage("synth needs --out <file>"))?;
    let mut spec = SynthSpec::planted(labels, features, examples, g.seed.unwrap_or(0));
    if independent {
        spec = spec.independent();
    }
    spec.validate().map_err(usage("synth"))?;
    check_fresh(out, g.force)?;
    let data = gen_synth(&spec).map_err(usage("synth"))?;
    write_mlc(&data, out).map_err(usage(out.display()))?;
    eprintln!("wrote {} examples to {}", data.len(), out.display());
    Ok(EXIT_OK)
}
