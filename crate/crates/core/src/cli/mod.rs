//! The `strucgrad` command line: argument parsing, exit codes, and the
//! pieces the commands share (run configuration, checkpoints, self-checks).
//!
//! Exit codes: 0 success, 1 a check failed, 2 usage or configuration error,
//! 3 numeric failure during training.

pub mod checkpoint;
mod commands;
pub mod config;
pub mod gradcheck;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::trainer::Regime;

pub use checkpoint::{Architecture, Checkpoint, CHECKPOINT_MAGIC};
pub use config::{DataConfig, ModelConfig, RunConfig, SynthConfig, Task};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Environment variable fixing the size of the worker pool.
pub const THREADS_ENV: &str = "STRUCGRAD_THREADS";

#[derive(Debug, Parser)]
#[command(name = "strucgrad", version, about = "Structured prediction energies trained by implicit differentiation")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalOpts {
    /// Seed overriding the one in the run configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (train, analyze-hessian) or file (synth).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    /// Tolerance applied to every gradient check.
    #[arg(long, global = true)]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model from a JSON run configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// implicit, alternating or mbce
        #[arg(long, default_value = "implicit")]
        regime: Regime,
    },
    /// Score a checkpoint on a data file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Compare every analytic derivative against finite differences.
    Gradcheck,
    /// Relate the learned label Hessian of a multi-label energy to label co-occurrence.
    AnalyzeHessian {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Generate synthetic multi-label data with planted label couplings.
    Synth {
        /// Number of labels.
        #[arg(long = "L")]
        labels: usize,
        /// Number of features.
        #[arg(long = "d")]
        features: usize,
        /// Number of examples.
        #[arg(long = "N")]
        examples: usize,
        /// Draw labels independently given the features.
        #[arg(long)]
        independent: bool,
    },
}

/// A failed command and the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl std::fmt::Display) -> Self {
        Failure { code: EXIT_USAGE, message: message.to_string() }
    }

    pub fn numeric(message: impl std::fmt::Display) -> Self {
        Failure { code: EXIT_NUMERIC, message: message.to_string() }
    }

    pub fn check(message: impl std::fmt::Display) -> Self {
        Failure { code: EXIT_CHECK_FAILED, message: message.to_string() }
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Results go to stdout, diagnostics to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

pub fn execute(cli: Cli) -> Result<i32, Failure> {
    configure_threads()?;
    let g = &cli.global;
    match cli.command {
        Command::Train { config, regime } => commands::train(g, &config, regime),
        Command::Eval { checkpoint, data } => commands::eval(&checkpoint, &data),
        Command::Gradcheck => commands::gradcheck(g),
        Command::AnalyzeHessian { checkpoint, data } => commands::analyze_hessian(g, &checkpoint, &data),
        Command::Synth { labels, features, examples, independent } => {
            commands::synth(g, labels, features, examples, independent)
        }
    }
}

/// Sizes the global worker pool from the environment. Results do not depend
/// on the pool size because every parallel reduction is ordered.
fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::usage(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    // A pool built earlier in the same process is kept.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_global_flags_after_the_verb() {
        let cli = Cli::try_parse_from(["strucgrad", "synth", "--L", "4", "--d", "3", "--N", "10", "--seed", "7", "--out", "x.txt"])
            .unwrap();
        assert_eq!(cli.global.seed, Some(7));
        assert!(matches!(cli.command, Command::Synth { labels: 4, features: 3, examples: 10, independent: false }));
    }

    #[test]
    fn bad_arguments_are_usage_errors() {
        assert_eq!(run(["strucgrad", "train"]), EXIT_USAGE);
        assert_eq!(run(["strucgrad", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["strucgrad", "train", "--config", "c.json", "--regime", "sideways"]), EXIT_USAGE);
    }
}
