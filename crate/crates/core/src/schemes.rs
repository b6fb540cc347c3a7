//! The learning schemes compared in the experiments, each a training
//! procedure returning something that scores individuals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federated::{
    build_centers, run_centralized_training, run_federated_training, CommMeter, CoxBatchObjective, FederatedConfig,
    FederatedPartition, Sampling, StackedBceObjective, TrainingRun,
};
use crate::optim::{newton_fit_cox, NewtonConfig, OptimizerConfig};
use crate::stacking::{build_stacked_dataset, Mlp, RiskFunction, StackedDataset};
use crate::survival::{build_time_grid, dot, quantize_times, Dataset, DiscreteTimeModel, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Scheme {
    /// Newton on the Cox loss of the pooled data.
    Pool,
    /// Newton at each center on its own data.
    Local,
    /// Per-center Newton fits, predictions averaged.
    Ens,
    /// Minibatch Cox on the pooled data, risk sets from the batch.
    Mini,
    /// Federated minibatch Cox stratified by center.
    NFl,
    /// Federated minibatch training of the discrete-time model.
    DtFl,
}

impl Scheme {
    pub const ALL: [Scheme; 6] = [Scheme::Pool, Scheme::Local, Scheme::Ens, Scheme::Mini, Scheme::NFl, Scheme::DtFl];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Pool => "POOL",
            Scheme::Local => "LOCAL",
            Scheme::Ens => "ENS",
            Scheme::Mini => "MINI",
            Scheme::NFl => "N_FL",
            Scheme::DtFl => "DT_FL",
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let normalized = s.trim().to_ascii_uppercase().replace('-', "_");
        Scheme::ALL
            .into_iter()
            .find(|scheme| scheme.name() == normalized || scheme.name().replace('_', "") == normalized)
            .ok_or_else(|| Error::Config(format!("unknown scheme `{s}`")))
    }
}

/// Shape of `φ_θ` for the discrete-time model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RiskFunctionSpec {
    /// `φ(x) = x`.
    #[default]
    Linear,
    /// Leaky-ReLU network with the given hidden widths and output width.
    Mlp { hidden: Vec<usize>, output: usize },
}

impl RiskFunctionSpec {
    pub fn build(&self, input_dim: usize, seed: u64) -> Result<RiskFunction> {
        match self {
            RiskFunctionSpec::Linear => Ok(RiskFunction::identity(input_dim)),
            RiskFunctionSpec::Mlp { hidden, output } => {
                let mut dims = Vec::with_capacity(hidden.len() + 2);
                dims.push(input_dim);
                dims.extend_from_slice(hidden);
                dims.push(*output);
                Ok(RiskFunction::Mlp(Mlp::glorot(dims, seed)?))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemeConfig {
    pub scheme: Scheme,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub rounds: usize,
    pub sampling: Sampling,
    /// Bin width `Q` for the discrete-time grid; unset uses the unique
    /// event times.
    pub bin_width: Option<f64>,
    /// Weight positives by the negative/positive ratio.
    pub weighted: bool,
    pub risk_fn: RiskFunctionSpec,
    pub alpha_init: AlphaInit,
    pub newton: NewtonConfig,
    pub local_steps: usize,
    pub seed: u64,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Pool,
            optimizer: OptimizerConfig::default(),
            batch_size: 100,
            rounds: 5000,
            sampling: Sampling::WithReplacement,
            bin_width: None,
            weighted: false,
            risk_fn: RiskFunctionSpec::Linear,
            alpha_init: AlphaInit::Empirical,
            newton: NewtonConfig::default(),
            local_steps: 1,
            seed: 0,
        }
    }
}

/// Per-scheme replacements for the shared training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SchemeOverride {
    pub optimizer: Option<OptimizerConfig>,
    pub batch_size: Option<usize>,
    pub rounds: Option<usize>,
    pub sampling: Option<Sampling>,
    pub weighted: Option<bool>,
    pub bin_width: Option<f64>,
}

impl SchemeConfig {
    pub fn overridden(mut self, o: &SchemeOverride) -> Self {
        self.optimizer = o.optimizer.unwrap_or(self.optimizer);
        self.batch_size = o.batch_size.unwrap_or(self.batch_size);
        self.rounds = o.rounds.unwrap_or(self.rounds);
        self.sampling = o.sampling.unwrap_or(self.sampling);
        self.weighted = o.weighted.unwrap_or(self.weighted);
        self.bin_width = o.bin_width.or(self.bin_width);
        self
    }

    pub fn with_scheme(&self, scheme: Scheme) -> Self {
        Self {
            scheme,
            ..self.clone()
        }
    }

    fn federated(&self) -> FederatedConfig {
        FederatedConfig {
            rounds: self.rounds,
            batch_size: self.batch_size,
            sampling: self.sampling,
            optimizer: self.optimizer,
            seed: self.seed,
            local_steps: self.local_steps,
            trace_every: None,
        }
    }

    fn validate(&self) -> Result<()> {
        let iterative = matches!(self.scheme, Scheme::Mini | Scheme::NFl | Scheme::DtFl);
        if iterative && self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".to_string()));
        }
        if self.scheme == Scheme::DtFl {
            if let Some(q) = self.bin_width {
                if !(q > 0.0 && q.is_finite()) {
                    return Err(Error::Config(format!("bin width must be positive, got {q}")));
                }
            }
        }
        Ok(())
    }
}

/// Starting values of the per-bin biases `α`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AlphaInit {
    /// The logit of the overall (weighted) positive rate in every bin.
    Constant,
    /// The logit of each bin's smoothed (weighted) event rate among those
    /// at risk, from per-bin counts pooled over centers.
    #[default]
    Empirical,
}

/// A trained risk scorer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScoringModel {
    Linear { beta: Vec<f64> },
    /// Mean of the per-center linear predictors.
    Ensemble { betas: Vec<Vec<f64>> },
    /// Independent per-center models; each is evaluated on its own.
    PerCenter { betas: Vec<Vec<f64>> },
    Discrete { model: DiscreteTimeModel },
}

impl ScoringModel {
    /// `η = score(x)`. For per-center models this is the first center's
    /// score; use [`ScoringModel::score_sets`] to get all of them.
    pub fn score(&self, x: &[f64]) -> f64 {
        match self {
            ScoringModel::Linear { beta } => dot(beta, x),
            ScoringModel::Ensemble { betas } => betas.iter().map(|b| dot(b, x)).sum::<f64>() / betas.len() as f64,
            ScoringModel::PerCenter { betas } => dot(&betas[0], x),
            ScoringModel::Discrete { model } => model.score(x),
        }
    }

    /// One score vector over `data` per constituent model.
    pub fn score_sets(&self, data: &Dataset) -> Vec<Vec<f64>> {
        let rows = |f: &dyn Fn(&[f64]) -> f64| data.individuals().iter().map(|i| f(&i.covariates)).collect();
        match self {
            ScoringModel::PerCenter { betas } => betas.iter().map(|b| rows(&|x| dot(b, x))).collect(),
            _ => vec![rows(&|x| self.score(x))],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedScheme {
    pub scheme: Scheme,
    pub model: ScoringModel,
    pub comm: CommMeter,
    /// Loss of each round's batch for the iterative schemes.
    pub batch_losses: Vec<f64>,
    /// Number of grid times of the discrete-time model.
    pub grid_len: Option<usize>,
    pub pos_weight: Option<f64>,
}

impl TrainedScheme {
    fn from_run(scheme: Scheme, model: ScoringModel, run: TrainingRun) -> Self {
        Self {
            scheme,
            model,
            comm: run.comm,
            batch_losses: run.batch_losses,
            grid_len: None,
            pos_weight: None,
        }
    }

    fn direct(scheme: Scheme, model: ScoringModel) -> Self {
        Self {
            scheme,
            model,
            comm: CommMeter::default(),
            batch_losses: Vec::new(),
            grid_len: None,
            pos_weight: None,
        }
    }
}

fn center_datasets(data: &Dataset, partition: &FederatedPartition) -> Result<Vec<Dataset>> {
    if partition.len() != data.len() {
        return Err(Error::DimensionMismatch {
            expected: data.len(),
            found: partition.len(),
        });
    }
    partition.members_by_center().iter().map(|m| data.subset(m)).collect()
}

fn require_events(centers: &[Dataset]) -> Result<()> {
    match centers.iter().position(|d| d.n_events() == 0) {
        Some(center) => Err(Error::EventFreeCenter { center }),
        None => Ok(()),
    }
}

fn per_center_newton(centers: &[Dataset], config: &NewtonConfig) -> Result<Vec<Vec<f64>>> {
    require_events(centers)?;
    centers
        .iter()
        .map(|d| newton_fit_cox(d, config).map(|fit| fit.model.beta))
        .collect()
}

/// Trains `config.scheme` on `data` split by `partition`.
pub fn train(config: &SchemeConfig, data: &Dataset, partition: &FederatedPartition) -> Result<TrainedScheme> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput("no training individuals"));
    }
    let scheme = config.scheme;
    match scheme {
        Scheme::Pool => {
            let fit = newton_fit_cox(data, &config.newton)?;
            Ok(TrainedScheme::direct(scheme, ScoringModel::Linear { beta: fit.model.beta }))
        }
        Scheme::Local => {
            let betas = per_center_newton(&center_datasets(data, partition)?, &config.newton)?;
            Ok(TrainedScheme::direct(scheme, ScoringModel::PerCenter { betas }))
        }
        Scheme::Ens => {
            let betas = per_center_newton(&center_datasets(data, partition)?, &config.newton)?;
            Ok(TrainedScheme::direct(scheme, ScoringModel::Ensemble { betas }))
        }
        Scheme::Mini => {
            if data.n_events() == 0 {
                return Err(Error::NoEvents);
            }
            let objective = CoxBatchObjective::new(data.clone());
            let run = run_centralized_training(&objective, vec![0.0; data.dim()], &config.federated())?;
            let beta = run.params.clone();
            Ok(TrainedScheme::from_run(scheme, ScoringModel::Linear { beta }, run))
        }
        Scheme::NFl => {
            let centers = center_datasets(data, partition)?;
            require_events(&centers)?;
            let mut datasets = centers.into_iter();
            let centers = build_centers(partition, |_, _| {
                Ok(CoxBatchObjective::new(datasets.next().expect("one dataset per center")))
            })?;
            let run = run_federated_training(&centers, partition, vec![0.0; data.dim()], &config.federated())?;
            let beta = run.params.clone();
            Ok(TrainedScheme::from_run(scheme, ScoringModel::Linear { beta }, run))
        }
        Scheme::DtFl => train_dt_fl(config, data, partition),
    }
}

/// Everything the discrete-time schemes share: the (possibly binned)
/// data, the grid, the global positive weight and the initial model.
struct DiscreteSetup {
    working: Dataset,
    grid: TimeGrid,
    template: DiscreteTimeModel,
    pos_weight: f64,
}

fn discrete_setup(config: &SchemeConfig, data: &Dataset, partition: &FederatedPartition) -> Result<(DiscreteSetup, Vec<Dataset>, Vec<StackedDataset>)> {
    let working = match config.bin_width {
        Some(q) => quantize_times(data, q)?,
        None => data.clone(),
    };
    let centers = center_datasets(&working, partition)?;
    let refs: Vec<&Dataset> = centers.iter().collect();
    let grid = build_time_grid(&refs, config.bin_width)?;
    let stacked = centers
        .iter()
        .map(|d| build_stacked_dataset(d, &grid, false))
        .collect::<Result<Vec<_>>>()?;
    let positives: usize = stacked.iter().map(|s| s.n_positive).sum();
    let negatives: usize = stacked.iter().map(|s| s.n_negative).sum();
    if positives == 0 {
        return Err(Error::NoPositiveSamples);
    }
    let pos_weight = if config.weighted {
        negatives as f64 / positives as f64
    } else {
        1.0
    };
    let risk_fn = config.risk_fn.build(working.dim(), config.seed)?;
    let mut template = DiscreteTimeModel::new(grid.len(), risk_fn);
    match config.alpha_init {
        AlphaInit::Constant => {
            let weighted_pos = pos_weight * positives as f64;
            let rate = weighted_pos / (weighted_pos + negatives as f64);
            template.alpha.iter_mut().for_each(|a| *a = logit(rate));
        }
        AlphaInit::Empirical => {
            // per-bin event and at-risk counts, summed over centers
            let mut events = vec![0usize; grid.len()];
            let mut at_risk = vec![0usize; grid.len()];
            for sample in stacked.iter().flat_map(|s| &s.samples) {
                at_risk[sample.grid_index] += 1;
                events[sample.grid_index] += usize::from(sample.label);
            }
            for ((a, &d), &n) in template.alpha.iter_mut().zip(&events).zip(&at_risk) {
                let weighted = pos_weight * d as f64;
                *a = logit((weighted + 0.5) / (weighted + (n - d) as f64 + 1.0));
            }
        }
    }
    let setup = DiscreteSetup {
        working,
        grid,
        template,
        pos_weight,
    };
    Ok((setup, centers, stacked))
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn discrete_result(run: TrainingRun, setup: &DiscreteSetup) -> Result<TrainedScheme> {
    let mut model = setup.template.clone();
    model.set_flat(&run.params)?;
    let mut trained = TrainedScheme::from_run(Scheme::DtFl, ScoringModel::Discrete { model }, run);
    trained.grid_len = Some(setup.grid.len());
    trained.pos_weight = Some(setup.pos_weight);
    Ok(trained)
}

fn train_dt_fl(config: &SchemeConfig, data: &Dataset, partition: &FederatedPartition) -> Result<TrainedScheme> {
    let (setup, centers, stacked) = discrete_setup(config, data, partition)?;
    // stacked item ids run individual-major over the pooled data, so a
    // center's own stacked order is ascending in the global ids
    let mut counts = vec![0; data.len()];
    for (members, s) in partition.members_by_center().iter().zip(&stacked) {
        for (&i, &c) in members.iter().zip(&s.per_individual) {
            counts[i] = c;
        }
    }
    let expanded = partition.expand(&counts)?;
    let mut parts = centers.into_iter().zip(stacked);
    let objectives = build_centers(&expanded, |_, _| {
        let (base, stacked) = parts.next().expect("one stacked dataset per center");
        StackedBceObjective::new(base, stacked, setup.template.clone(), setup.pos_weight)
    })?;
    let run = run_federated_training(&objectives, &expanded, setup.template.to_flat(), &config.federated())?;
    discrete_result(run, &setup)
}

/// The discrete-time model trained centrally on the pooled stacked data
/// with the same batches, initialisation and grid as DT-FL; reference for
/// the federated run.
pub fn train_pooled_stacked(config: &SchemeConfig, data: &Dataset, partition: &FederatedPartition) -> Result<TrainedScheme> {
    config.validate()?;
    let (setup, _, _) = discrete_setup(config, data, partition)?;
    let stacked = build_stacked_dataset(&setup.working, &setup.grid, false)?;
    let objective = StackedBceObjective::new(setup.working.clone(), stacked, setup.template.clone(), setup.pos_weight)?;
    let run = run_centralized_training(&objective, setup.template.to_flat(), &config.federated())?;
    discrete_result(run, &setup)
}
