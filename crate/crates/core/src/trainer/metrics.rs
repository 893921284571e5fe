use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::losses::Scores;
use crate::Result;

/// First line of every metrics file; the config hash follows it.
pub const METRICS_MAGIC: &str = "# strucgrad metrics v1";

pub const METRICS_COLUMNS: [&str; 14] = [
    "outer_iter",
    "theta_updates",
    "phi_updates",
    "aux_loss",
    "prim_loss",
    "hypergrad_norm",
    "explicit_norm",
    "implicit_norm",
    "ihvp_residual",
    "aux_grad_norm",
    "valid_example_f1",
    "valid_micro_f1",
    "valid_macro_f1",
    "valid_token_accuracy",
];

/// One outer iteration. Update counts are cumulative; regimes without a
/// hypergradient leave those columns at zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub outer_iter: usize,
    pub theta_updates: usize,
    pub phi_updates: usize,
    pub aux_loss: f64,
    pub prim_loss: f64,
    pub hypergrad_norm: f64,
    pub explicit_norm: f64,
    pub implicit_norm: f64,
    pub ihvp_residual: f64,
    pub aux_grad_norm: f64,
    /// Validation scores when this iteration was an evaluation point.
    pub valid: Option<Scores>,
}

impl MetricsRecord {
    fn row(&self) -> Vec<String> {
        let f = |v: f64| format!("{v:e}");
        let opt = |v: Option<f64>| v.map(f).unwrap_or_default();
        let (ex, mi, ma, tok) = match self.valid {
            Some(Scores::MultiLabel(s)) => (Some(s.example_f1), Some(s.micro_f1), Some(s.macro_f1), None),
            Some(Scores::Sequence { token_accuracy }) => (None, None, None, Some(token_accuracy)),
            _ => (None, None, None, None),
        };
        vec![
            self.outer_iter.to_string(),
            self.theta_updates.to_string(),
            self.phi_updates.to_string(),
            f(self.aux_loss),
            f(self.prim_loss),
            f(self.hypergrad_norm),
            f(self.explicit_norm),
            f(self.implicit_norm),
            f(self.ihvp_residual),
            f(self.aux_grad_norm),
            opt(ex),
            opt(mi),
            opt(ma),
            opt(tok),
        ]
    }
}

/// Writes the versioned header line, the column row, and one row per record.
/// Floats use Rust's shortest round-trip formatting, so equal runs give equal bytes.
pub fn write_metrics_csv<W: Write>(mut out: W, config_hash: &str, records: &[MetricsRecord]) -> Result<()> {
    writeln!(out, "{METRICS_MAGIC} config_sha256={config_hash}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_COLUMNS)?;
    for r in records {
        w.write_record(r.row())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a metrics file back: the config hash and the raw rows keyed by column.
pub fn read_metrics_csv(text: &str) -> Result<(String, Vec<Vec<String>>)> {
    let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
    let hash = first
        .strip_prefix(METRICS_MAGIC)
        .and_then(|s| s.trim().strip_prefix("config_sha256="))
        .ok_or_else(|| crate::Error::Format("not a strucgrad metrics file".into()))?
        .to_string();
    let mut r = csv::Reader::from_reader(rest.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != METRICS_COLUMNS {
        return Err(crate::Error::Format(format!("unexpected metrics columns {header:?}")));
    }
    let rows = r
        .records()
        .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<_, _>>()?;
    Ok((hash, rows))
}
