//! Synthetic survival data from a Cox model with constant baseline hazard,
//! uniform censoring, and the two ways of spreading it over centers.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federated::FederatedPartition;
use crate::survival::{dot, Dataset, Individual};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    /// Shuffle, then deal round-robin.
    #[default]
    Uniform,
    /// Sort by observed time and give contiguous blocks to successive centers.
    SortedByEndpoint,
}

/// Upper bound of the uniform censoring distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CensoringBound {
    /// Median of the individual's own event-time distribution, `log 2 · e^{−βᵀx}`.
    #[default]
    PerIndividual,
    /// Median at `x = 0`, `log 2`, shared by everyone.
    Population,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BetaSpec {
    /// `β ~ N(0, I_P)`, optionally rescaled to the given norm.
    Random { norm: Option<f64> },
    Fixed { beta: Vec<f64> },
}

impl Default for BetaSpec {
    fn default() -> Self {
        BetaSpec::Random { norm: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_centers: usize,
    pub per_center: usize,
    pub dim: usize,
    pub beta_star: BetaSpec,
    pub split: SplitKind,
    pub censoring: CensoringBound,
    /// Multiplies every generated time (e.g. to express them in days).
    pub time_scale: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_centers: 5,
            per_center: 1000,
            dim: 200,
            beta_star: BetaSpec::default(),
            split: SplitKind::Uniform,
            censoring: CensoringBound::PerIndividual,
            time_scale: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub dataset: Dataset,
    pub partition: FederatedPartition,
    pub beta_star: Vec<f64>,
    /// Unobserved event times `τ_i`.
    pub true_times: Vec<f64>,
    pub censoring_fraction: f64,
}

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticData> {
    if config.n_centers == 0 || config.per_center == 0 || config.dim == 0 {
        return Err(Error::InvalidValue(
            "centers, individuals per center and dimension must all be at least 1".to_string(),
        ));
    }
    if !(config.time_scale > 0.0 && config.time_scale.is_finite()) {
        return Err(Error::InvalidValue("time scale must be positive".to_string()));
    }
    let p = config.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let beta_star = match &config.beta_star {
        BetaSpec::Fixed { beta } => {
            if beta.len() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    found: beta.len(),
                });
            }
            beta.clone()
        }
        BetaSpec::Random { norm } => {
            let mut beta: Vec<f64> = (0..p).map(|_| StandardNormal.sample(&mut rng)).collect();
            if let Some(target) = norm {
                let current = dot(&beta, &beta).sqrt();
                if current > 0.0 {
                    beta.iter_mut().for_each(|b| *b *= target / current);
                }
            }
            beta
        }
    };

    let covariate = Normal::new(0.0, (1.0 / p as f64).sqrt()).expect("positive variance");
    let n = config.n_centers * config.per_center;
    let mut individuals = Vec::with_capacity(n);
    let mut true_times = Vec::with_capacity(n);
    let mut censored = 0usize;
    for _ in 0..n {
        let x: Vec<f64> = (0..p).map(|_| covariate.sample(&mut rng)).collect();
        let rate = dot(&beta_star, &x).exp();
        let u: f64 = rng.random();
        let tau = -(1.0 - u).ln() / rate;
        let bound = match config.censoring {
            CensoringBound::PerIndividual => std::f64::consts::LN_2 / rate,
            CensoringBound::Population => std::f64::consts::LN_2,
        };
        let c = rng.random::<f64>() * bound;
        let event = tau <= c;
        if !event {
            censored += 1;
        }
        let t = tau.min(c) * config.time_scale;
        individuals.push(Individual::new(x, t, event)?);
        true_times.push(tau * config.time_scale);
    }

    let assignments = match config.split {
        SplitKind::Uniform => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let mut assignments = vec![0; n];
            for (pos, &i) in order.iter().enumerate() {
                assignments[i] = pos % config.n_centers;
            }
            assignments
        }
        SplitKind::SortedByEndpoint => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                individuals[a]
                    .time
                    .partial_cmp(&individuals[b].time)
                    .expect("finite times")
            });
            let mut assignments = vec![0; n];
            for (pos, &i) in order.iter().enumerate() {
                assignments[i] = pos / config.per_center;
            }
            assignments
        }
    };

    Ok(SyntheticData {
        dataset: Dataset::new(individuals)?,
        partition: FederatedPartition::new(assignments, config.n_centers)?,
        beta_star,
        true_times,
        censoring_fraction: censored as f64 / n as f64,
    })
}
