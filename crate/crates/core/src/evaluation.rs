//! Concordance index and the two cross-validation protocols.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federated::FederatedPartition;
use crate::schemes::{train, Scheme, SchemeConfig, ScoringModel};
use crate::survival::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct PairCounts {
    concordant: u64,
    tied: u64,
    comparable: u64,
}

impl PairCounts {
    fn value(self) -> Result<f64> {
        if self.comparable == 0 {
            return Err(Error::NoComparablePairs);
        }
        Ok((2 * self.concordant + self.tied) as f64 / (2 * self.comparable) as f64)
    }
}

fn check_lengths(scores: &[f64], times: &[f64], events: &[bool]) -> Result<()> {
    if times.len() != scores.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            found: times.len(),
        });
    }
    if events.len() != scores.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            found: events.len(),
        });
    }
    if scores.iter().chain(times).any(|v| v.is_nan()) {
        return Err(Error::InvalidValue("NaN score or time".to_string()));
    }
    Ok(())
}

/// Harrell's concordance over pairs `(i, j)` with `δ_i = 1` and `t_j > t_i`:
/// full credit when `η_i > η_j`, half credit for tied scores.
pub fn c_index(scores: &[f64], times: &[f64], events: &[bool]) -> Result<f64> {
    check_lengths(scores, times, events)?;
    let n = scores.len();
    // ranks of the scores, equal scores sharing a rank
    let mut sorted: Vec<f64> = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let rank: Vec<usize> = scores
        .iter()
        .map(|s| sorted.partition_point(|v| v < s))
        .collect();
    let mut tree = vec![0u64; sorted.len() + 1];
    let add = |tree: &mut Vec<u64>, r: usize| {
        let mut k = r + 1;
        while k < tree.len() {
            tree[k] += 1;
            k += k & k.wrapping_neg();
        }
    };
    // number of inserted scores with rank < r
    let below = |tree: &Vec<u64>, r: usize| {
        let mut k = r;
        let mut total = 0;
        while k > 0 {
            total += tree[k];
            k -= k & k.wrapping_neg();
        }
        total
    };

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[b].total_cmp(&times[a]));
    let mut counts = PairCounts {
        concordant: 0,
        tied: 0,
        comparable: 0,
    };
    let mut inserted = 0u64;
    let mut start = 0;
    while start < n {
        let mut end = start;
        while end < n && times[order[end]] == times[order[start]] {
            end += 1;
        }
        // the tree holds exactly the individuals with strictly later times
        for &i in &order[start..end] {
            if events[i] {
                let lower = below(&tree, rank[i]);
                let upto = below(&tree, rank[i] + 1);
                counts.concordant += lower;
                counts.tied += upto - lower;
                counts.comparable += inserted;
            }
        }
        for &i in &order[start..end] {
            add(&mut tree, rank[i]);
            inserted += 1;
        }
        start = end;
    }
    counts.value()
}

/// The same quantity by enumerating every ordered pair.
pub fn c_index_naive(scores: &[f64], times: &[f64], events: &[bool]) -> Result<f64> {
    check_lengths(scores, times, events)?;
    let mut counts = PairCounts {
        concordant: 0,
        tied: 0,
        comparable: 0,
    };
    for i in 0..scores.len() {
        if !events[i] {
            continue;
        }
        for j in 0..scores.len() {
            if times[j] > times[i] {
                counts.comparable += 1;
                if scores[j] < scores[i] {
                    counts.concordant += 1;
                } else if scores[j] == scores[i] {
                    counts.tied += 1;
                }
            }
        }
    }
    counts.value()
}

/// C-index of a trained model on `data`; per-center models are averaged.
pub fn model_c_index(model: &ScoringModel, data: &Dataset) -> Result<f64> {
    let times = data.times();
    let events = data.events();
    let sets = model.score_sets(data);
    let mut total = 0.0;
    for scores in &sets {
        total += c_index(scores, &times, &events)?;
    }
    Ok(total / sets.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CvMode {
    /// Each center splits its data into folds; fold `i` of every center
    /// forms the `i`-th test set.
    #[default]
    PerCenterFolds,
    /// Each center in turn is held out entirely.
    OutOfCenter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvPlan {
    pub mode: CvMode,
    pub folds: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for CvPlan {
    fn default() -> Self {
        Self {
            mode: CvMode::PerCenterFolds,
            folds: 5,
            repeats: 1,
            seed: 0,
        }
    }
}

impl CvPlan {
    pub fn validate(&self, partition: &FederatedPartition) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::InvalidPlan("at least one repeat is needed".to_string()));
        }
        match self.mode {
            CvMode::PerCenterFolds => {
                if self.folds < 2 {
                    return Err(Error::InvalidPlan(format!("{} folds; at least 2 are needed", self.folds)));
                }
                let smallest = partition.sizes().into_iter().min().unwrap_or(0);
                if self.folds >= smallest {
                    return Err(Error::InvalidPlan(format!(
                        "{} folds for a center of {smallest} individuals; folds must be below the smallest center size",
                        self.folds
                    )));
                }
            }
            CvMode::OutOfCenter => {
                if partition.n_centers() < 2 {
                    return Err(Error::InvalidPlan(
                        "out-of-center validation needs at least two centers".to_string(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Number of test splits per repeat.
    pub fn splits(&self, partition: &FederatedPartition) -> usize {
        match self.mode {
            CvMode::PerCenterFolds => self.folds,
            CvMode::OutOfCenter => partition.n_centers(),
        }
    }

    /// Fold of every individual in `repeat`: a seeded per-center shuffle
    /// dealt round-robin over the folds.
    pub fn fold_assignment(&self, partition: &FederatedPartition, repeat: usize) -> Vec<usize> {
        let mut folds = vec![0; partition.len()];
        for (k, mut members) in partition.members_by_center().into_iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, repeat as u64, k as u64));
            members.shuffle(&mut rng);
            for (pos, i) in members.into_iter().enumerate() {
                folds[i] = pos % self.folds;
            }
        }
        folds
    }

    /// `(train, test)` individual ids of every split of `repeat`.
    pub fn split_indices(&self, partition: &FederatedPartition, repeat: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
        let labels: Vec<usize> = match self.mode {
            CvMode::PerCenterFolds => self.fold_assignment(partition, repeat),
            CvMode::OutOfCenter => partition.assignments().to_vec(),
        };
        (0..self.splits(partition))
            .map(|s| (0..partition.len()).partition(|&i| labels[i] != s))
            .collect()
    }
}

/// SplitMix64 finalizer over three words.
pub fn mix_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut z = base
        ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F).rotate_left(31);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvRow {
    pub repeat: usize,
    /// Fold index, or the held-out center.
    pub fold_or_center: usize,
    pub scheme: Scheme,
    /// Missing when training or evaluation failed.
    pub c_index: Option<f64>,
    pub error: Option<String>,
    pub train_seconds: f64,
    pub comm_values_down: usize,
    pub comm_values_up: usize,
}

fn run_split(
    config: &SchemeConfig,
    data: &Dataset,
    partition: &FederatedPartition,
    repeat: usize,
    split: usize,
    train_ids: &[usize],
    test_ids: &[usize],
) -> CvRow {
    let mut row = CvRow {
        repeat,
        fold_or_center: split,
        scheme: config.scheme,
        c_index: None,
        error: None,
        train_seconds: 0.0,
        comm_values_down: 0,
        comm_values_up: 0,
    };
    let started = Instant::now();
    let outcome = (|| {
        let train_data = data.subset(train_ids)?;
        let train_partition = partition.restrict(train_ids)?;
        let test_data = data.subset(test_ids)?;
        let mut config = config.clone();
        config.seed = mix_seed(config.seed, repeat as u64, split as u64);
        let trained = train(&config, &train_data, &train_partition)?;
        Ok::<_, Error>((trained, test_data))
    })();
    row.train_seconds = started.elapsed().as_secs_f64();
    match outcome.and_then(|(trained, test)| {
        row.comm_values_down = trained.comm.total_down();
        row.comm_values_up = trained.comm.total_up();
        model_c_index(&trained.model, &test)
    }) {
        Ok(c) => row.c_index = Some(c),
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// Cross-validates every scheme in `schemes` under `plan`. A split that
/// cannot be trained or scored yields a row with the error recorded.
/// Rows are ordered by repeat, split, then the order of `schemes`.
pub fn run_cv(
    plan: &CvPlan,
    schemes: &[SchemeConfig],
    data: &Dataset,
    partition: &FederatedPartition,
) -> Result<Vec<CvRow>> {
    if partition.len() != data.len() {
        return Err(Error::DimensionMismatch {
            expected: data.len(),
            found: partition.len(),
        });
    }
    if schemes.is_empty() {
        return Err(Error::InvalidPlan("no schemes to evaluate".to_string()));
    }
    plan.validate(partition)?;
    let mut tasks = Vec::new();
    for repeat in 0..plan.repeats {
        for (split, (train_ids, test_ids)) in plan.split_indices(partition, repeat).into_iter().enumerate() {
            tasks.push((repeat, split, train_ids, test_ids));
        }
    }
    let jobs: Vec<(usize, usize)> = (0..tasks.len())
        .flat_map(|t| (0..schemes.len()).map(move |s| (t, s)))
        .collect();
    Ok(jobs
        .into_par_iter()
        .map(|(t, s)| {
            let (repeat, split, train_ids, test_ids) = &tasks[t];
            run_split(&schemes[s], data, partition, *repeat, *split, train_ids, test_ids)
        })
        .collect())
}

/// Mean c-index of one scheme over the successful rows.
pub fn mean_c_index(rows: &[CvRow], scheme: Scheme) -> Option<f64> {
    let values: Vec<f64> = rows
        .iter()
        .filter(|r| r.scheme == scheme)
        .filter_map(|r| r.c_index)
        .collect();
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}
