use crate::models::{clamp_prob, is_clamped};
use crate::{Error, Result};

/// Multi-label binary cross-entropy `Σ_j −y_j log ŷ_j − (1 − y_j) log(1 − ŷ_j)`,
/// with `ŷ` clamped away from 0 and 1. Accumulates `∂/∂ŷ` into `d_yhat`.
pub fn mbce(gold: &[f64], yhat: &[f64], d_yhat: Option<&mut [f64]>) -> Result<f64> {
    if gold.len() != yhat.len() {
        return Err(Error::shape(format!("mbce of {} labels against {}", yhat.len(), gold.len())));
    }
    let value = gold
        .iter()
        .zip(yhat)
        .map(|(&y, &p)| {
            let p = clamp_prob(p);
            -y * p.ln() - (1.0 - y) * (1.0 - p).ln()
        })
        .sum();
    if let Some(d) = d_yhat {
        for ((dj, &y), &p) in d.iter_mut().zip(gold).zip(yhat) {
            if !is_clamped(p) {
                *dj += -y / p + (1.0 - y) / (1.0 - p);
            }
        }
    }
    Ok(value)
}

/// `Σ_t −log ŷ_{t, y_t}` over `T × n_tags` rows; `gold` rows are one-hot.
pub fn token_cross_entropy(gold: &[f64], yhat: &[f64], n_tags: usize, d_yhat: Option<&mut [f64]>) -> Result<f64> {
    if gold.len() != yhat.len() || n_tags == 0 || !gold.len().is_multiple_of(n_tags) {
        return Err(Error::shape("token cross-entropy shape mismatch"));
    }
    let value = gold.iter().zip(yhat).map(|(&y, &p)| -y * clamp_prob(p).ln()).sum();
    if let Some(d) = d_yhat {
        for ((dj, &y), &p) in d.iter_mut().zip(gold).zip(yhat) {
            if y != 0.0 && !is_clamped(p) {
                *dj -= y / p;
            }
        }
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mbce_examples() {
        let near_perfect = mbce(&[1.0, 0.0], &[1.0 - 1e-7, 1e-7], None).unwrap();
        assert!(near_perfect > 0.0 && (near_perfect - 2e-7).abs() < 1e-12);
        assert!((mbce(&[1.0], &[0.5], None).unwrap() - std::f64::consts::LN_2).abs() < 1e-6);
        assert!((mbce(&[0.0, 1.0], &[0.5, 0.5], None).unwrap() - 1.386294).abs() < 1e-6);
        assert!(mbce(&[1.0], &[0.5, 0.5], None).is_err());
    }

    #[test]
    fn mbce_clamps_saturated_outputs() {
        let v = mbce(&[1.0], &[0.0], None).unwrap();
        assert!(v.is_finite() && (v + (1e-7f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn token_ce_counts_gold_tags_only() {
        let v = token_cross_entropy(&[0.0, 1.0, 1.0, 0.0], &[0.25, 0.75, 0.5, 0.5], 2, None).unwrap();
        assert!((v - (-(0.75f64).ln() - (0.5f64).ln())).abs() < 1e-15);
    }
}
