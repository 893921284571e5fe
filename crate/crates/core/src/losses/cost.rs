use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Dissimilarity `s(ŷ, y) ∈ [0, 1]` with `s(y, y) = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskCost {
    /// `1 − F1` over label sets.
    F1,
    /// Fraction of positions whose tag differs; labels are `T × n_tags` one-hot rows.
    Hamming { n_tags: usize },
}

/// F1 between two binary vectors; both supports empty counts as 1.
pub fn f1_score(pred: &[bool], gold: &[bool]) -> f64 {
    assert_eq!(pred.len(), gold.len(), "f1_score: length mismatch");
    let tp = pred.iter().zip(gold).filter(|(p, g)| **p && **g).count();
    let denom = pred.iter().filter(|p| **p).count() + gold.iter().filter(|g| **g).count();
    if denom == 0 {
        1.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

fn as_binary(v: &[f64]) -> Result<Vec<bool>> {
    v.iter()
        .map(|&x| {
            if x == 0.0 {
                Ok(false)
            } else if x == 1.0 {
                Ok(true)
            } else {
                Err(Error::invalid(format!("discrete task cost needs binary labels, got {x}")))
            }
        })
        .collect()
}

impl TaskCost {
    /// Cost between binary (or one-hot) outputs.
    pub fn discrete(&self, pred: &[f64], gold: &[f64]) -> Result<f64> {
        if pred.len() != gold.len() {
            return Err(Error::shape(format!("cost of {} vs {} labels", pred.len(), gold.len())));
        }
        let (p, g) = (as_binary(pred)?, as_binary(gold)?);
        match *self {
            TaskCost::F1 => Ok(1.0 - f1_score(&p, &g)),
            TaskCost::Hamming { n_tags } => {
                let t = positions(pred.len(), n_tags)?;
                let wrong = p.chunks(n_tags).zip(g.chunks(n_tags)).filter(|(a, b)| a != b).count();
                Ok(wrong as f64 / t as f64)
            }
        }
    }

    /// Differentiable extension to relaxed `pred`; agrees with
    /// [`TaskCost::discrete`] on binary inputs. Accumulates `∂/∂pred` into `d_pred`.
    pub fn soft(&self, pred: &[f64], gold: &[f64], d_pred: Option<&mut [f64]>) -> Result<f64> {
        if pred.len() != gold.len() {
            return Err(Error::shape(format!("cost of {} vs {} labels", pred.len(), gold.len())));
        }
        match *self {
            TaskCost::F1 => {
                // 1 − 2⟨ŷ,y⟩ / (Σŷ + Σy)
                let inter: f64 = pred.iter().zip(gold).map(|(a, b)| a * b).sum();
                let denom: f64 = pred.iter().sum::<f64>() + gold.iter().sum::<f64>();
                if denom == 0.0 {
                    return Ok(0.0);
                }
                if let Some(d) = d_pred {
                    for (dj, &yj) in d.iter_mut().zip(gold) {
                        *dj += -2.0 * (yj * denom - inter) / (denom * denom);
                    }
                }
                Ok(1.0 - 2.0 * inter / denom)
            }
            TaskCost::Hamming { n_tags } => {
                // 1 − (1/T) Σ_t ⟨ŷ_t, y_t⟩
                let t = positions(pred.len(), n_tags)? as f64;
                let inter: f64 = pred.iter().zip(gold).map(|(a, b)| a * b).sum();
                if let Some(d) = d_pred {
                    for (dj, &yj) in d.iter_mut().zip(gold) {
                        *dj -= yj / t;
                    }
                }
                Ok((t - inter) / t)
            }
        }
    }
}

fn positions(len: usize, n_tags: usize) -> Result<usize> {
    if n_tags == 0 || !len.is_multiple_of(n_tags) || len == 0 {
        return Err(Error::shape(format!("{len} values do not form rows of {n_tags} tags")));
    }
    Ok(len / n_tags)
}
