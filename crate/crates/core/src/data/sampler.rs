use serde::{Deserialize, Serialize};

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

/// Labeled batch size and unlabeled-to-labeled ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub labeled: usize,
    pub mu: usize,
}

impl Default for BatchPlan {
    fn default() -> Self {
        BatchPlan { labeled: 16, mu: 7 }
    }
}

impl BatchPlan {
    pub fn unlabeled(&self) -> usize {
        self.labeled * self.mu
    }
}

/// Positions into the labeled and unlabeled sample lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchIndices {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
}

/// Draws both batches uniformly with replacement, keyed by (seed, iteration).
/// An empty unlabeled split yields an empty unlabeled batch.
pub fn sample_batches(
    n_labeled: usize,
    n_unlabeled: usize,
    plan: &BatchPlan,
    seed: u64,
    iteration: u64,
) -> Result<BatchIndices> {
    if n_labeled == 0 {
        return Err(Error::data("labeled split is empty"));
    }
    let mut rl = rng::stream(&[seed, rng::tag::BATCH_LABELED, iteration]);
    let labeled = (0..plan.labeled).map(|_| rl.random_range(0..n_labeled)).collect();
    let unlabeled = if n_unlabeled == 0 {
        Vec::new()
    } else {
        let mut ru = rng::stream(&[seed, rng::tag::BATCH_UNLABELED, iteration]);
        (0..plan.unlabeled()).map(|_| ru.random_range(0..n_unlabeled)).collect()
    };
    Ok(BatchIndices { labeled, unlabeled })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_sizes() {
        let plan = BatchPlan::default();
        let b = sample_batches(45, 171, &plan, 0, 0).unwrap();
        assert_eq!((b.labeled.len(), b.unlabeled.len()), (16, 112));
    }

    #[test]
    fn keyed_by_seed_and_iteration() {
        let plan = BatchPlan::default();
        let a = sample_batches(45, 171, &plan, 3, 17).unwrap();
        assert_eq!(a, sample_batches(45, 171, &plan, 3, 17).unwrap());
        assert_ne!(a, sample_batches(45, 171, &plan, 3, 18).unwrap());
        assert!(a.unlabeled.iter().all(|&i| i < 171));
    }

    #[test]
    fn single_labeled_sample_repeats() {
        let b = sample_batches(1, 5, &BatchPlan::default(), 0, 4).unwrap();
        assert_eq!(b.labeled, vec![0; 16]);
    }

    #[test]
    fn empty_labeled_is_a_data_error() {
        assert_eq!(sample_batches(0, 5, &BatchPlan::default(), 0, 0).unwrap_err().exit_code(), 2);
        assert!(sample_batches(3, 0, &BatchPlan::default(), 0, 0).unwrap().unlabeled.is_empty());
    }
}
