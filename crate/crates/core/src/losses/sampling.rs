use rand::{Rng, RngCore};

use crate::{Error, Result};

/// `1[u_j < ŷ_j]`: a Bernoulli(ŷ_j) draw when `u_j ~ U(0, 1)`.
pub fn bernoulli_from_uniform(yhat: &[f64], uniforms: &[f64]) -> Vec<f64> {
    assert_eq!(yhat.len(), uniforms.len());
    yhat.iter().zip(uniforms).map(|(&p, &u)| if u < p { 1.0 } else { 0.0 }).collect()
}

/// `K` independent binary vectors with component `j` drawn as Bernoulli(`ŷ_j`).
pub fn sample_bernoulli(yhat: &[f64], k: usize, rng: &mut dyn RngCore) -> Vec<Vec<f64>> {
    (0..k)
        .map(|_| {
            let u: Vec<f64> = (0..yhat.len()).map(|_| rng.random::<f64>()).collect();
            bernoulli_from_uniform(yhat, &u)
        })
        .collect()
}

/// Gold output followed by `K` discrete negatives: `ȳ₀ = y, ȳ₁ … ȳ_K`.
#[derive(Clone, Debug, PartialEq)]
pub struct NegativeSampleSet {
    members: Vec<Vec<f64>>,
}

impl NegativeSampleSet {
    pub fn new(gold: Vec<f64>, negatives: Vec<Vec<f64>>) -> Result<Self> {
        let all_binary = |v: &[f64]| v.iter().all(|&x| x == 0.0 || x == 1.0);
        if !all_binary(&gold) || negatives.iter().any(|n| !all_binary(n)) {
            return Err(Error::invalid("negative sample sets hold binary vectors only"));
        }
        if negatives.iter().any(|n| n.len() != gold.len()) {
            return Err(Error::shape("negative sample has the wrong length"));
        }
        let mut members = Vec::with_capacity(negatives.len() + 1);
        members.push(gold);
        members.extend(negatives);
        Ok(NegativeSampleSet { members })
    }

    pub fn gold(&self) -> &[f64] {
        &self.members[0]
    }

    pub fn negatives(&self) -> &[Vec<f64>] {
        &self.members[1..]
    }

    pub fn members(&self) -> &[Vec<f64>] {
        &self.members
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn degenerate_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for s in sample_bernoulli(&[1.0; 5], 20, &mut rng) {
            assert_eq!(s, vec![1.0; 5]);
        }
        for s in sample_bernoulli(&[0.0; 5], 20, &mut rng) {
            assert_eq!(s, vec![0.0; 5]);
        }
    }

    #[test]
    fn sample_means_concentrate() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let samples = sample_bernoulli(&[0.5; 6], 10_000, &mut rng);
        for j in 0..6 {
            let mean = samples.iter().map(|s| s[j]).sum::<f64>() / 10_000.0;
            assert!((mean - 0.5).abs() <= 0.02, "component {j}: {mean}");
        }
    }

    #[test]
    fn set_keeps_gold_first() {
        let s = NegativeSampleSet::new(vec![1.0, 0.0], vec![vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(s.gold(), &[1.0, 0.0]);
        assert_eq!(s.negatives().len(), 2);
        assert!(NegativeSampleSet::new(vec![1.0, 0.0], vec![vec![0.5, 0.0]]).is_err());
    }
}
