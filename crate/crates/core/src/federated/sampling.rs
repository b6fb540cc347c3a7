use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FederatedPartition;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Independent uniform draws.
    #[default]
    WithReplacement,
    /// Consecutive chunks of a fresh permutation each epoch.
    WithoutReplacement,
}

/// Draws global batches `B_q` uniformly over `0..n_items`.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    rng: ChaCha8Rng,
    n_items: usize,
    batch_size: usize,
    sampling: Sampling,
    permutation: Vec<usize>,
    cursor: usize,
}

impl BatchSampler {
    pub fn new(n_items: usize, batch_size: usize, sampling: Sampling, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::InvalidValue("batch size must be at least 1".to_string()));
        }
        if n_items == 0 {
            return Err(Error::EmptyInput("no items to sample batches from"));
        }
        if sampling == Sampling::WithoutReplacement && batch_size > n_items {
            return Err(Error::InvalidValue(format!(
                "batch size {batch_size} exceeds the {n_items} available items"
            )));
        }
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            n_items,
            batch_size,
            sampling,
            permutation: (0..n_items).collect(),
            cursor: n_items,
        })
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn next_global_batch(&mut self) -> Vec<usize> {
        match self.sampling {
            Sampling::WithReplacement => (0..self.batch_size)
                .map(|_| self.rng.random_range(0..self.n_items))
                .collect(),
            Sampling::WithoutReplacement => {
                if self.cursor >= self.n_items {
                    self.permutation.shuffle(&mut self.rng);
                    self.cursor = 0;
                }
                let end = (self.cursor + self.batch_size).min(self.n_items);
                let batch = self.permutation[self.cursor..end].to_vec();
                self.cursor = end;
                batch
            }
        }
    }
}

/// `B_{q,k} = B_q ∩ I_k`, keeping the order (and multiplicity) of `global`.
pub fn split_by_center(partition: &FederatedPartition, global: &[usize]) -> Vec<Vec<usize>> {
    let mut local = vec![Vec::new(); partition.n_centers()];
    for &i in global {
        local[partition.center_of(i)].push(i);
    }
    local
}

/// Draws the next global batch and splits it by center.
pub fn sample_pooled_equivalent_batches(
    partition: &FederatedPartition,
    sampler: &mut BatchSampler,
) -> Result<Vec<Vec<usize>>> {
    if sampler.n_items() != partition.len() {
        return Err(Error::DimensionMismatch {
            expected: partition.len(),
            found: sampler.n_items(),
        });
    }
    Ok(split_by_center(partition, &sampler.next_global_batch()))
}
