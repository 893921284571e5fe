//! Sparse multi-label text format.
//!
//! ```text
//! N d L
//! 0,2 1:0.5 3:1.0
//!  4:2.0
//! ```
//!
//! The header holds the example count, feature dimension and label count.
//! Each following line is a comma-separated label list (possibly empty),
//! then space-separated `index:value` features with strictly increasing
//! indices. Files are UTF-8 and LF-terminated; a trailing newline is optional.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlcExample {
    /// `(index, value)` pairs with strictly increasing indices.
    pub features: Vec<(usize, f64)>,
    pub labels: Vec<bool>,
}

impl MlcExample {
    pub fn dense_features(&self, dim: usize) -> Vec<f64> {
        let mut x = vec![0.0; dim];
        for &(i, v) in &self.features {
            x[i] = v;
        }
        x
    }

    pub fn label_set(&self) -> Vec<usize> {
        self.labels.iter().enumerate().filter_map(|(i, &b)| b.then_some(i)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlcDataset {
    pub n_features: usize,
    pub n_labels: usize,
    pub examples: Vec<MlcExample>,
}

impl MlcDataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Same header, different examples.
    pub fn with_examples(&self, examples: Vec<MlcExample>) -> Self {
        MlcDataset { n_features: self.n_features, n_labels: self.n_labels, examples }
    }
}

pub fn load_mlc(path: impl AsRef<Path>) -> Result<MlcDataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_mlc(&text, path)
}

/// Parses the format from memory; `origin` is only used in error messages.
pub fn parse_mlc(text: &str, origin: &Path) -> Result<MlcDataset> {
    let err = |line: usize, msg: String| Error::Parse { path: origin.to_path_buf(), line, msg };
    let body = text.strip_suffix('\n').unwrap_or(text);
    let mut lines = body.split('\n');
    let header = lines.next().unwrap_or("");
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| err(1, format!("bad header {header:?}: {e}")))?;
    let [n, n_features, n_labels] = dims[..] else {
        return Err(err(1, format!("header must be \"N d L\", got {header:?}")));
    };

    let mut examples = Vec::with_capacity(n);
    for (idx, raw) in lines.enumerate() {
        let lineno = idx + 2;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        let (label_field, feature_field) = match line.split_once(' ') {
            Some((first, rest)) if !first.contains(':') => (first, rest),
            Some(_) => ("", line),
            None if line.contains(':') => ("", line),
            None => (line, ""),
        };

        let mut labels = vec![false; n_labels];
        if !label_field.is_empty() {
            for tok in label_field.split(',') {
                let j: usize = tok.parse().map_err(|_| err(lineno, format!("bad label index {tok:?}")))?;
                if j >= n_labels {
                    return Err(err(lineno, format!("label index {j} >= L = {n_labels}")));
                }
                if labels[j] {
                    return Err(err(lineno, format!("duplicate label {j}")));
                }
                labels[j] = true;
            }
        }

        let mut features = Vec::new();
        for tok in feature_field.split(' ').filter(|t| !t.is_empty()) {
            let (i, v) = tok
                .split_once(':')
                .ok_or_else(|| err(lineno, format!("feature {tok:?} is not index:value")))?;
            let i: usize = i.parse().map_err(|_| err(lineno, format!("bad feature index in {tok:?}")))?;
            let v: f64 = v.parse().map_err(|_| err(lineno, format!("bad feature value in {tok:?}")))?;
            if i >= n_features {
                return Err(err(lineno, format!("feature index {i} >= d = {n_features}")));
            }
            if !v.is_finite() {
                return Err(err(lineno, format!("non-finite feature value in {tok:?}")));
            }
            if let Some(&(prev, _)) = features.last() {
                if i == prev {
                    return Err(err(lineno, format!("duplicate feature index {i}")));
                }
                if i < prev {
                    return Err(err(lineno, format!("feature indices must increase ({i} after {prev})")));
                }
            }
            features.push((i, v));
        }
        examples.push(MlcExample { features, labels });
    }
    if examples.len() != n {
        return Err(err(1, format!("header declares {n} examples, file has {}", examples.len())));
    }
    Ok(MlcDataset { n_features, n_labels, examples })
}

/// Serializes in the same format; `{}` formatting of `f64` round-trips exactly.
pub fn write_mlc(data: &MlcDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "{} {} {}", data.len(), data.n_features, data.n_labels).unwrap();
    for ex in &data.examples {
        let labels: Vec<String> = ex.label_set().iter().map(usize::to_string).collect();
        out.push_str(&labels.join(","));
        for (i, v) in &ex.features {
            write!(out, " {i}:{v}").unwrap();
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
