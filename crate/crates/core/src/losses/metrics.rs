use serde::{Deserialize, Serialize};

use super::f1_score;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiLabelScores {
    pub example_f1: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
}

/// Evaluation scores of a decoded prediction set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scores {
    MultiLabel(MultiLabelScores),
    Sequence { token_accuracy: f64 },
    /// Problems without a task metric (toy objectives).
    Unscored,
}

impl Scores {
    /// Score used for model selection: example-F1 or token accuracy.
    pub fn selection(&self) -> Option<f64> {
        match self {
            Scores::MultiLabel(s) => Some(s.example_f1),
            Scores::Sequence { token_accuracy } => Some(*token_accuracy),
            Scores::Unscored => None,
        }
    }
}

fn check(preds: &[Vec<bool>], golds: &[Vec<bool>]) -> Result<()> {
    if preds.is_empty() {
        return Err(Error::invalid("cannot score an empty dataset"));
    }
    if preds.len() != golds.len() || preds.iter().zip(golds).any(|(p, g)| p.len() != g.len()) {
        return Err(Error::shape("predictions and gold labels differ in shape"));
    }
    Ok(())
}

/// Mean per-example F1.
pub fn example_f1(preds: &[Vec<bool>], golds: &[Vec<bool>]) -> Result<f64> {
    check(preds, golds)?;
    Ok(preds.iter().zip(golds).map(|(p, g)| f1_score(p, g)).sum::<f64>() / preds.len() as f64)
}

/// F1 of the pooled confusion counts.
pub fn micro_f1(preds: &[Vec<bool>], golds: &[Vec<bool>]) -> Result<f64> {
    check(preds, golds)?;
    let (mut tp, mut denom) = (0usize, 0usize);
    for (p, g) in preds.iter().zip(golds) {
        tp += p.iter().zip(g).filter(|(a, b)| **a && **b).count();
        denom += p.iter().filter(|a| **a).count() + g.iter().filter(|b| **b).count();
    }
    Ok(if denom == 0 { 1.0 } else { 2.0 * tp as f64 / denom as f64 })
}

/// Mean over labels of per-label F1 (a label never predicted nor present scores 1).
pub fn macro_f1(preds: &[Vec<bool>], golds: &[Vec<bool>]) -> Result<f64> {
    check(preds, golds)?;
    let l = preds[0].len();
    if l == 0 {
        return Err(Error::invalid("no labels to average over"));
    }
    let total: f64 = (0..l)
        .map(|j| {
            let col_p: Vec<bool> = preds.iter().map(|p| p[j]).collect();
            let col_g: Vec<bool> = golds.iter().map(|g| g[j]).collect();
            f1_score(&col_p, &col_g)
        })
        .sum();
    Ok(total / l as f64)
}

pub fn multi_label_scores(preds: &[Vec<bool>], golds: &[Vec<bool>]) -> Result<MultiLabelScores> {
    Ok(MultiLabelScores {
        example_f1: example_f1(preds, golds)?,
        micro_f1: micro_f1(preds, golds)?,
        macro_f1: macro_f1(preds, golds)?,
    })
}

/// Fraction of positions tagged correctly, pooled over sequences.
pub fn token_accuracy(preds: &[Vec<usize>], golds: &[Vec<usize>]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::invalid("cannot score an empty dataset"));
    }
    if preds.len() != golds.len() || preds.iter().zip(golds).any(|(p, g)| p.len() != g.len()) {
        return Err(Error::shape("predicted and gold tag sequences differ in shape"));
    }
    let total: usize = golds.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(Error::EmptySequence);
    }
    let right: usize = preds.iter().zip(golds).map(|(p, g)| p.iter().zip(g).filter(|(a, b)| a == b).count()).sum();
    Ok(right as f64 / total as f64)
}
