//! In-process simulation of federated training.
//!
//! Each [`Center`] owns its local data behind a [`LocalObjective`] and only
//! ever sees indices of items it holds; parameters go down and gradients
//! come up as explicit values, so the exchanged volume is metered per round.

mod objective;
mod partition;
mod sampling;

use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use objective::{CoxBatchObjective, LocalObjective, StackedBceObjective};
pub use partition::FederatedPartition;
pub use sampling::{sample_pooled_equivalent_batches, split_by_center, BatchSampler, Sampling};

use crate::error::{Error, Result};
use crate::optim::{Optimizer, OptimizerConfig};

pub struct Center<O> {
    id: usize,
    /// Global item ids held here, ascending; position is the local index.
    members: Vec<usize>,
    objective: O,
    reads: AtomicUsize,
}

impl<O: LocalObjective> Center<O> {
    pub fn new(id: usize, members: Vec<usize>, objective: O) -> Result<Self> {
        if members.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidPartition(format!(
                "center {id} members must be strictly ascending"
            )));
        }
        if members.len() != objective.n_items() {
            return Err(Error::DimensionMismatch {
                expected: members.len(),
                found: objective.n_items(),
            });
        }
        Ok(Self {
            id,
            members,
            objective,
            reads: AtomicUsize::new(0),
        })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn objective(&self) -> &O {
        &self.objective
    }

    /// Number of item reads served so far.
    pub fn reads(&self) -> usize {
        self.reads.load(Ordering::Relaxed)
    }

    fn to_local(&self, batch: &[usize]) -> Result<Vec<usize>> {
        batch
            .iter()
            .map(|&g| {
                self.members.binary_search(&g).map_err(|_| Error::ForeignIndex {
                    center: self.id,
                    index: g,
                })
            })
            .collect()
    }

    /// `g_{q,k}`: gradient of the loss summed over this center's part of
    /// the batch (global item ids), at the broadcast parameters.
    pub fn local_gradient(&self, batch: &[usize], params: &[f64]) -> Result<LocalUpdate> {
        if params.len() != self.objective.n_params() {
            return Err(Error::DimensionMismatch {
                expected: self.objective.n_params(),
                found: params.len(),
            });
        }
        let local = self.to_local(batch)?;
        if local.is_empty() {
            return Ok(LocalUpdate {
                loss: 0.0,
                gradient: vec![0.0; params.len()],
            });
        }
        self.reads.fetch_add(local.len(), Ordering::Relaxed);
        let (loss, gradient) = self.objective.loss_and_gradient(params, &local)?;
        Ok(LocalUpdate { loss, gradient })
    }

    /// Several plain gradient steps on the same local batch, returning the
    /// local parameters (federated averaging).
    fn local_steps(&self, batch: &[usize], params: &[f64], steps: usize, learning_rate: f64) -> Result<Vec<f64>> {
        let local = self.to_local(batch)?;
        let mut theta = params.to_vec();
        for _ in 0..steps {
            self.reads.fetch_add(local.len(), Ordering::Relaxed);
            let (_, g) = self.objective.loss_and_gradient(&theta, &local)?;
            for (t, g) in theta.iter_mut().zip(&g) {
                *t -= learning_rate * g;
            }
        }
        Ok(theta)
    }
}

/// Builds one center per partition cell, each objective constructed from
/// the global ids it holds.
pub fn build_centers<O: LocalObjective>(
    partition: &FederatedPartition,
    mut make_objective: impl FnMut(usize, &[usize]) -> Result<O>,
) -> Result<Vec<Center<O>>> {
    partition
        .members_by_center()
        .into_iter()
        .enumerate()
        .map(|(k, members)| {
            let objective = make_objective(k, &members)?;
            Center::new(k, members, objective)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate {
    pub loss: f64,
    pub gradient: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundState {
    pub round: usize,
    pub params: Vec<f64>,
}

/// Sums the center gradients in ascending center order and applies one
/// optimizer step.
pub fn aggregate_and_step(
    state: RoundState,
    gradients: &[Vec<f64>],
    optimizer: &mut dyn Optimizer,
) -> Result<RoundState> {
    let n = state.params.len();
    let mut total = vec![0.0; n];
    for g in gradients {
        if g.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: g.len(),
            });
        }
        for (t, v) in total.iter_mut().zip(g) {
            *t += v;
        }
    }
    let RoundState { round, mut params } = state;
    optimizer.step(&mut params, &total)?;
    Ok(RoundState {
        round: round + 1,
        params,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederatedConfig {
    pub rounds: usize,
    pub batch_size: usize,
    pub sampling: Sampling,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    /// Local gradient steps per round; values above 1 switch to federated
    /// averaging with plain local steps at the optimizer's learning rate.
    pub local_steps: usize,
    /// Record the loss over all data every this many rounds.
    pub trace_every: Option<usize>,
}

impl Default for FederatedConfig {
    fn default() -> Self {
        Self {
            rounds: 5000,
            batch_size: 100,
            sampling: Sampling::WithReplacement,
            optimizer: OptimizerConfig::default(),
            seed: 0,
            local_steps: 1,
            trace_every: None,
        }
    }
}

/// Real values exchanged per round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct CommMeter {
    pub rounds: usize,
    pub n_centers: usize,
    /// Parameters broadcast to each center per round.
    pub down_params: usize,
    /// Values returned by each center per round.
    pub up_params_per_center: usize,
}

impl CommMeter {
    pub fn total_down(&self) -> usize {
        self.rounds * self.n_centers * self.down_params
    }

    pub fn total_up(&self) -> usize {
        self.rounds * self.n_centers * self.up_params_per_center
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRun {
    pub params: Vec<f64>,
    /// Loss on each round's global batch, before the update.
    pub batch_losses: Vec<f64>,
    /// `(round, loss over all items)` at the traced rounds.
    pub full_losses: Vec<(usize, f64)>,
    pub comm: CommMeter,
}

fn check_centers<O: LocalObjective>(centers: &[Center<O>], partition: &FederatedPartition, n_params: usize) -> Result<()> {
    if centers.len() != partition.n_centers() {
        return Err(Error::InvalidPartition(format!(
            "{} centers for a partition of {}",
            centers.len(),
            partition.n_centers()
        )));
    }
    for (k, (center, members)) in centers.iter().zip(partition.members_by_center()).enumerate() {
        if center.id != k || center.members != members {
            return Err(Error::InvalidPartition(format!(
                "center {k} does not hold the items the partition assigns to it"
            )));
        }
        if center.objective.n_params() != n_params {
            return Err(Error::DimensionMismatch {
                expected: n_params,
                found: center.objective.n_params(),
            });
        }
    }
    Ok(())
}

/// Pooled-equivalent federated training: per round a global batch is drawn
/// over all items, split by center, local gradients are computed at the
/// centers, summed and fed to the optimizer.
pub fn run_federated_training<O: LocalObjective>(
    centers: &[Center<O>],
    partition: &FederatedPartition,
    init: Vec<f64>,
    config: &FederatedConfig,
) -> Result<TrainingRun> {
    let n_params = init.len();
    check_centers(centers, partition, n_params)?;
    let mut sampler = BatchSampler::new(partition.len(), config.batch_size, config.sampling, config.seed)?;
    let mut optimizer = config.optimizer.build(n_params);
    let mut state = RoundState {
        round: 0,
        params: init,
    };
    let mut batch_losses = Vec::with_capacity(config.rounds);
    let mut full_losses = Vec::new();
    let mut comm = CommMeter {
        rounds: 0,
        n_centers: centers.len(),
        down_params: n_params,
        up_params_per_center: n_params,
    };
    for q in 0..config.rounds {
        if let Some(every) = config.trace_every.filter(|e| *e > 0) {
            if q % every == 0 {
                full_losses.push((q, total_loss(centers, &state.params)?));
            }
        }
        let local = sample_pooled_equivalent_batches(partition, &mut sampler)?;
        if config.local_steps > 1 {
            let batch_total: usize = local.iter().map(Vec::len).sum();
            let lr = config.optimizer.learning_rate();
            let locals = centers
                .par_iter()
                .zip(local.par_iter())
                .map(|(center, batch)| {
                    let loss = center.local_gradient(batch, &state.params)?.loss;
                    let theta = if batch.is_empty() {
                        None
                    } else {
                        Some(center.local_steps(batch, &state.params, config.local_steps, lr)?)
                    };
                    Ok((loss, batch.len(), theta))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut averaged = vec![0.0; n_params];
            let mut loss = 0.0;
            for (l, size, theta) in &locals {
                loss += l;
                if let Some(theta) = theta {
                    let w = *size as f64 / batch_total as f64;
                    for (a, t) in averaged.iter_mut().zip(theta) {
                        *a += w * t;
                    }
                }
            }
            batch_losses.push(loss);
            state = RoundState {
                round: state.round + 1,
                params: averaged,
            };
        } else {
            let updates = centers
                .par_iter()
                .zip(local.par_iter())
                .map(|(center, batch)| center.local_gradient(batch, &state.params))
                .collect::<Result<Vec<_>>>()?;
            batch_losses.push(updates.iter().map(|u| u.loss).sum());
            let gradients: Vec<Vec<f64>> = updates.into_iter().map(|u| u.gradient).collect();
            state = aggregate_and_step(state, &gradients, optimizer.as_mut())?;
        }
        comm.rounds += 1;
    }
    if let Some(every) = config.trace_every.filter(|e| *e > 0) {
        if config.rounds.is_multiple_of(every) {
            full_losses.push((config.rounds, total_loss(centers, &state.params)?));
        }
    }
    Ok(TrainingRun {
        params: state.params,
        batch_losses,
        full_losses,
        comm,
    })
}

fn total_loss<O: LocalObjective>(centers: &[Center<O>], params: &[f64]) -> Result<f64> {
    centers.iter().map(|c| c.objective.total_loss(params)).sum()
}

/// Minibatch training on one pooled objective with the same batch sampler
/// and optimizer as [`run_federated_training`]; no splitting or
/// aggregation is involved.
pub fn run_centralized_training<O: LocalObjective>(
    objective: &O,
    init: Vec<f64>,
    config: &FederatedConfig,
) -> Result<TrainingRun> {
    let n_params = init.len();
    if objective.n_params() != n_params {
        return Err(Error::DimensionMismatch {
            expected: objective.n_params(),
            found: n_params,
        });
    }
    let mut sampler = BatchSampler::new(objective.n_items(), config.batch_size, config.sampling, config.seed)?;
    let mut optimizer = config.optimizer.build(n_params);
    let mut params = init;
    let mut batch_losses = Vec::with_capacity(config.rounds);
    let mut full_losses = Vec::new();
    for q in 0..config.rounds {
        if let Some(every) = config.trace_every.filter(|e| *e > 0) {
            if q % every == 0 {
                full_losses.push((q, objective.total_loss(&params)?));
            }
        }
        let batch = sampler.next_global_batch();
        let (loss, gradient) = objective.loss_and_gradient(&params, &batch)?;
        batch_losses.push(loss);
        optimizer.step(&mut params, &gradient)?;
    }
    if let Some(every) = config.trace_every.filter(|e| *e > 0) {
        if config.rounds.is_multiple_of(every) {
            full_losses.push((config.rounds, objective.total_loss(&params)?));
        }
    }
    Ok(TrainingRun {
        params,
        batch_losses,
        full_losses,
        comm: CommMeter::default(),
    })
}
