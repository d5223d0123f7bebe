//! Class-imbalance-aware batch construction.
//!
//! Training batches are built by oversampling the minority class: every batch
//! carries a fixed count of positives drawn with replacement from the
//! positive pool, the remainder drawn with replacement from the negative
//! pool. Evaluation never uses these batches; it sees the original class
//! proportions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Instance;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub batch_size: usize,
    /// Fraction of each batch filled with positives; default 0.10.
    #[serde(default = "default_positive_ratio")]
    pub positive_ratio: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_positive_ratio() -> f64 {
    0.10
}

impl Default for BatchPlan {
    fn default() -> Self {
        BatchPlan {
            batch_size: 128,
            positive_ratio: default_positive_ratio(),
            seed: 0,
        }
    }
}

impl BatchPlan {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        if !(self.positive_ratio > 0.0 && self.positive_ratio < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "positive_ratio must lie in (0,1), got {}",
                self.positive_ratio
            )));
        }
        if (self.positive_ratio * self.batch_size as f64).ceil() < 1.0 {
            return Err(Error::InvalidArgument(
                "positive_ratio x batch_size must admit at least one positive".into(),
            ));
        }
        Ok(())
    }

    /// Positives per batch: round(ratio x size), at least 1, at most size.
    pub fn positives_per_batch(&self) -> usize {
        let n = (self.positive_ratio * self.batch_size as f64).round() as usize;
        n.clamp(1, self.batch_size)
    }
}

/// Infinite deterministic stream of oversampled batches.
pub struct BatchStream<'a> {
    positives: Vec<&'a Instance>,
    negatives: Vec<&'a Instance>,
    n_pos: usize,
    batch_size: usize,
    rng: rand_chacha::ChaCha8Rng,
}

impl<'a> Iterator for BatchStream<'a> {
    type Item = Vec<&'a Instance>;

    fn next(&mut self) -> Option<Self::Item> {
        let mut batch = Vec::with_capacity(self.batch_size);
        for _ in 0..self.n_pos {
            let i = self.rng.random_range(0..self.positives.len());
            batch.push(self.positives[i]);
        }
        for _ in 0..self.batch_size - self.n_pos {
            let i = self.rng.random_range(0..self.negatives.len());
            batch.push(self.negatives[i]);
        }
        // Deterministic within-batch shuffle so gradient steps do not see the
        // classes in blocks.
        for i in (1..batch.len()).rev() {
            let j = self.rng.random_range(0..=i);
            batch.swap(i, j);
        }
        Some(batch)
    }
}

/// Build the batch stream over a labeled pool. Errors if either class is
/// absent.
pub fn make_batches<'a>(
    labeled: &[&'a Instance],
    plan: &BatchPlan,
    rng_seed: u64,
) -> Result<BatchStream<'a>> {
    plan.validate()?;
    let positives: Vec<&Instance> = labeled.iter().copied().filter(|i| i.label).collect();
    let negatives: Vec<&Instance> = labeled.iter().copied().filter(|i| !i.label).collect();
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::DegenerateClass(format!(
            "batch construction needs both classes ({} positives, {} negatives)",
            positives.len(),
            negatives.len()
        )));
    }
    Ok(BatchStream {
        positives,
        negatives,
        n_pos: plan.positives_per_batch(),
        batch_size: plan.batch_size,
        rng: seed::rng(seed::derive(rng_seed, "batches", plan.seed)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn instance(label: bool, id: u64) -> Instance {
        Instance {
            numeric_values: vec![id as f64],
            category_codes: vec![],
            label,
            event_time: id as f64,
            label_time: id as f64,
            row_id: id,
        }
    }

    fn pool(n_pos: usize, n_neg: usize) -> Vec<Instance> {
        let mut v = Vec::new();
        for i in 0..n_pos {
            v.push(instance(true, i as u64));
        }
        for i in 0..n_neg {
            v.push(instance(false, (n_pos + i) as u64));
        }
        v
    }

    fn refs(pool: &[Instance]) -> Vec<&Instance> {
        pool.iter().collect()
    }

    #[test]
    fn every_batch_has_exact_positive_count() {
        let pool = pool(5, 200);
        let plan = BatchPlan {
            batch_size: 100,
            positive_ratio: 0.10,
            seed: 0,
        };
        let stream = make_batches(&refs(&pool), &plan, 7).unwrap();
        for batch in stream.take(1000) {
            assert_eq!(batch.len(), 100);
            assert_eq!(batch.iter().filter(|i| i.label).count(), 10);
        }
    }

    #[test]
    fn single_positive_is_replicated_with_replacement() {
        let pool = pool(1, 50);
        let plan = BatchPlan {
            batch_size: 20,
            positive_ratio: 0.10,
            seed: 0,
        };
        let stream = make_batches(&refs(&pool), &plan, 3).unwrap();
        for batch in stream.take(50) {
            let pos: Vec<_> = batch.iter().filter(|i| i.label).collect();
            assert_eq!(pos.len(), 2);
            assert!(pos.iter().all(|i| i.row_id == 0));
        }
    }

    #[test]
    fn same_seed_gives_identical_streams() {
        let pool = pool(10, 90);
        let plan = BatchPlan {
            batch_size: 32,
            positive_ratio: 0.10,
            seed: 5,
        };
        let a: Vec<Vec<u64>> = make_batches(&refs(&pool), &plan, 11)
            .unwrap()
            .take(20)
            .map(|b| b.iter().map(|i| i.row_id).collect())
            .collect();
        let b: Vec<Vec<u64>> = make_batches(&refs(&pool), &plan, 11)
            .unwrap()
            .take(20)
            .map(|b| b.iter().map(|i| i.row_id).collect())
            .collect();
        assert_eq!(a, b);
        let c: Vec<Vec<u64>> = make_batches(&refs(&pool), &plan, 12)
            .unwrap()
            .take(20)
            .map(|b| b.iter().map(|i| i.row_id).collect())
            .collect();
        assert_ne!(a, c);
    }

    #[test]
    fn missing_class_is_rejected() {
        let pool = pool(0, 10);
        let plan = BatchPlan::default();
        assert!(matches!(
            make_batches(&refs(&pool), &plan, 0),
            Err(Error::DegenerateClass(_))
        ));
        let pool = pool2_only_pos();
        assert!(matches!(
            make_batches(&refs(&pool), &plan, 0),
            Err(Error::DegenerateClass(_))
        ));
    }

    fn pool2_only_pos() -> Vec<Instance> {
        pool(10, 0)
    }

    #[test]
    fn small_batches_keep_at_least_one_positive() {
        let plan = BatchPlan {
            batch_size: 3,
            positive_ratio: 0.10,
            seed: 0,
        };
        assert_eq!(plan.positives_per_batch(), 1);
    }
}
