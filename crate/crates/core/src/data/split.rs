use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Train / validation / test partition.
#[derive(Clone, Debug, PartialEq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub valid: Vec<T>,
    pub test: Vec<T>,
}

/// Seeded shuffle, then cut at cumulative rounded boundaries so the parts
/// are disjoint and cover everything when the fractions sum to one.
pub fn split<T: Clone>(items: &[T], fractions: [f64; 3], seed: u64) -> Result<Split<T>> {
    if fractions.iter().any(|f| !f.is_finite() || *f < 0.0) {
        return Err(Error::invalid(format!("split fractions must be non-negative, got {fractions:?}")));
    }
    let total: f64 = fractions.iter().sum();
    if total > 1.0 + 1e-9 {
        return Err(Error::invalid(format!("split fractions sum to {total} > 1")));
    }
    let n = items.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = |f: f64| ((n as f64 * f).round() as usize).min(n);
    let b1 = cut(fractions[0]);
    let b2 = cut(fractions[0] + fractions[1]).max(b1);
    let b3 = cut(total).max(b2);
    let take = |r: std::ops::Range<usize>| order[r].iter().map(|&i| items[i].clone()).collect();
    Ok(Split { train: take(0..b1), valid: take(b1..b2), test: take(b2..b3) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn everything_in_train() {
        let s = split(&(0..7).collect::<Vec<_>>(), [1.0, 0.0, 0.0], 1).unwrap();
        assert_eq!(s.train.len(), 7);
        assert!(s.valid.is_empty() && s.test.is_empty());
    }

    #[test]
    fn sizes_and_disjointness() {
        let items: Vec<usize> = (0..10).collect();
        let s = split(&items, [0.8, 0.1, 0.1], 42).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (8, 1, 1));
        let mut all: Vec<usize> = s.train.iter().chain(&s.valid).chain(&s.test).copied().collect();
        all.sort();
        assert_eq!(all, items);
        assert_eq!(split(&items, [0.8, 0.1, 0.1], 42).unwrap(), s);
        assert_ne!(split(&items, [0.8, 0.1, 0.1], 43).unwrap().train, s.train);
    }

    #[test]
    fn rejects_oversubscription() {
        assert!(split(&[1, 2, 3], [0.7, 0.2, 0.2], 0).is_err());
        assert!(split(&[1, 2, 3], [-0.1, 0.2, 0.2], 0).is_err());
    }
}
