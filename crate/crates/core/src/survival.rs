//! Survival data types, the Cox partial likelihood (pooled and stratified),
//! the discrete-time proportional-hazards model and the check that relates
//! the two as the per-bin hazards become small.
//!
//! Grid indices are zero-based throughout the crate: index `m` addresses the
//! `m + 1`-th smallest grid time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federated::FederatedPartition;
use crate::stacking::RiskFunction;

/// One observation `(x, t, δ)`. When `event` is true, `time` is the event
/// time itself; otherwise it is a censoring time (a lower bound on it).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub covariates: Vec<f64>,
    pub time: f64,
    pub event: bool,
}

impl Individual {
    pub fn new(covariates: Vec<f64>, time: f64, event: bool) -> Result<Self> {
        if !time.is_finite() || time < 0.0 {
            return Err(Error::InvalidValue(format!(
                "observed time must be finite and non-negative, got {time}"
            )));
        }
        if covariates.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(
                "covariates must be finite".to_string(),
            ));
        }
        Ok(Self {
            covariates,
            time,
            event,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    individuals: Vec<Individual>,
    dim: usize,
}

impl Dataset {
    pub fn new(individuals: Vec<Individual>) -> Result<Self> {
        let first = individuals
            .first()
            .ok_or(Error::EmptyInput("dataset needs at least one individual"))?;
        let dim = first.covariates.len();
        if let Some(bad) = individuals.iter().find(|ind| ind.covariates.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: bad.covariates.len(),
            });
        }
        Ok(Self { individuals, dim })
    }

    pub fn len(&self) -> usize {
        self.individuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.individuals.is_empty()
    }

    /// Covariate dimension `P`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn individuals(&self) -> &[Individual] {
        &self.individuals
    }

    pub fn get(&self, i: usize) -> &Individual {
        &self.individuals[i]
    }

    pub fn times(&self) -> Vec<f64> {
        self.individuals.iter().map(|ind| ind.time).collect()
    }

    pub fn events(&self) -> Vec<bool> {
        self.individuals.iter().map(|ind| ind.event).collect()
    }

    pub fn n_events(&self) -> usize {
        self.individuals.iter().filter(|ind| ind.event).count()
    }

    pub fn max_time(&self) -> f64 {
        self.individuals
            .iter()
            .map(|ind| ind.time)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Sub-dataset holding `indices` in the given order (duplicates allowed).
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let individuals = indices
            .iter()
            .map(|&i| self.individuals[i].clone())
            .collect::<Vec<_>>();
        if individuals.is_empty() {
            return Err(Error::EmptyInput("subset selects no individuals"));
        }
        Ok(Dataset {
            individuals,
            dim: self.dim,
        })
    }

    pub(crate) fn map_times(&self, f: impl Fn(f64) -> f64) -> Dataset {
        Dataset {
            individuals: self
                .individuals
                .iter()
                .map(|ind| Individual {
                    covariates: ind.covariates.clone(),
                    time: f(ind.time),
                    event: ind.event,
                })
                .collect(),
            dim: self.dim,
        }
    }
}

/// Ordered unique times `s(1) < ... < s(T)`, optionally on a lattice of
/// bin width `Q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    times: Vec<f64>,
    bin_width: Option<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>, bin_width: Option<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::EmptyInput("time grid needs at least one time"));
        }
        if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::InvalidValue(
                "grid times must be finite and non-negative".to_string(),
            ));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidValue(
                "grid times must be strictly increasing".to_string(),
            ));
        }
        if let Some(q) = bin_width {
            if !(q > 0.0 && q.is_finite()) {
                return Err(Error::InvalidValue(format!(
                    "bin width must be positive, got {q}"
                )));
            }
            for &t in &times {
                let k = (t / q).round();
                if k < 1.0 || lattice_point(q, k) != t {
                    return Err(Error::InvalidValue(format!(
                        "grid time {t} is not a positive multiple of {q}"
                    )));
                }
            }
        }
        Ok(Self { times, bin_width })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn bin_width(&self) -> Option<f64> {
        self.bin_width
    }

    /// Index `m` with `s(m) == t` exactly.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.times
            .binary_search_by(|s| s.partial_cmp(&t).expect("grid times are finite"))
            .ok()
    }

    /// Number of grid times strictly smaller than `t`.
    pub fn count_before(&self, t: f64) -> usize {
        self.times.partition_point(|&s| s < t)
    }

    /// Number of grid times smaller than or equal to `t`.
    pub fn count_up_to(&self, t: f64) -> usize {
        self.times.partition_point(|&s| s <= t)
    }
}

fn lattice_point(q: f64, k: f64) -> f64 {
    q * k
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRiskModel {
    pub beta: Vec<f64>,
}

impl LinearRiskModel {
    pub fn new(beta: Vec<f64>) -> Self {
        Self { beta }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            beta: vec![0.0; dim],
        }
    }

    /// Linear predictor `βᵀx`.
    pub fn score(&self, x: &[f64]) -> f64 {
        dot(&self.beta, x)
    }
}

/// Discrete-time proportional-hazards model: per-bin biases `alpha`, a risk
/// representation `φ_θ` and weights `beta` on top of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteTimeModel {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub risk_fn: RiskFunction,
}

impl DiscreteTimeModel {
    /// Zero biases and weights over a grid of length `grid_len`.
    pub fn new(grid_len: usize, risk_fn: RiskFunction) -> Self {
        let out = risk_fn.output_dim();
        Self {
            alpha: vec![0.0; grid_len],
            beta: vec![0.0; out],
            risk_fn,
        }
    }

    pub fn grid_len(&self) -> usize {
        self.alpha.len()
    }

    /// Number of scalars in `[α; β; θ]`.
    pub fn n_params(&self) -> usize {
        self.alpha.len() + self.beta.len() + self.risk_fn.n_params()
    }

    /// Flat parameter layout `[α | β | θ]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.n_params());
        flat.extend_from_slice(&self.alpha);
        flat.extend_from_slice(&self.beta);
        flat.extend_from_slice(self.risk_fn.params());
        flat
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::DimensionMismatch {
                expected: self.n_params(),
                found: flat.len(),
            });
        }
        let t = self.alpha.len();
        let p = self.beta.len();
        self.alpha.copy_from_slice(&flat[..t]);
        self.beta.copy_from_slice(&flat[t..t + p]);
        self.risk_fn.set_params(&flat[t + p..]);
        Ok(())
    }

    /// Risk score `βᵀφ_θ(x)`.
    pub fn score(&self, x: &[f64]) -> f64 {
        dot(&self.beta, &self.risk_fn.forward(x))
    }

    /// Baseline hazard `p0(m) = σ(α(m))`.
    pub fn baseline_hazard(&self, m: usize) -> Result<f64> {
        self.alpha
            .get(m)
            .map(|a| sigmoid(*a))
            .ok_or(Error::GridIndexOutOfRange {
                index: m,
                len: self.alpha.len(),
            })
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Overflow-safe logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Loss and derivatives of the negative partial log-likelihood.
#[derive(Debug, Clone)]
pub struct CoxDerivatives {
    pub loss: f64,
    pub gradient: Vec<f64>,
    /// Row-major `P × P`, present only when requested.
    pub hessian: Option<Vec<f64>>,
}

/// Evaluates the Cox loss over the individuals listed in `indices`
/// (duplicates count as distinct individuals). Risk sets are `t_j ≥ t_i`,
/// restricted to `indices`.
///
/// Individuals are visited in decreasing time; the accumulators for
/// `Σ e^η`, `Σ x e^η` and `Σ x xᵀ e^η` are kept relative to the running
/// maximum of `η`, and rescaled whenever that maximum grows.
pub(crate) fn cox_terms(
    data: &Dataset,
    indices: &[usize],
    beta: &[f64],
    want_gradient: bool,
    want_hessian: bool,
) -> Result<CoxDerivatives> {
    let p = data.dim();
    if beta.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: beta.len(),
        });
    }
    let mut order: Vec<usize> = indices.to_vec();
    order.sort_by(|&a, &b| {
        data.get(b)
            .time
            .partial_cmp(&data.get(a).time)
            .expect("times are finite")
    });
    let eta: Vec<f64> = order.iter().map(|&i| dot(beta, &data.get(i).covariates)).collect();

    let want_gradient = want_gradient || want_hessian;
    let mut shift = f64::NEG_INFINITY;
    let mut s0 = 0.0;
    let mut s1 = vec![0.0; if want_gradient { p } else { 0 }];
    let mut s2 = vec![0.0; if want_hessian { p * p } else { 0 }];

    let mut loss = 0.0;
    let mut gradient = vec![0.0; p];
    let mut hessian = if want_hessian { Some(vec![0.0; p * p]) } else { None };
    let mut n_events = 0usize;

    let mut start = 0;
    while start < order.len() {
        let t = data.get(order[start]).time;
        let mut end = start;
        while end < order.len() && data.get(order[end]).time == t {
            end += 1;
        }
        for k in start..end {
            let e = eta[k];
            if e > shift {
                let scale = (shift - e).exp();
                s0 *= scale;
                s1.iter_mut().for_each(|v| *v *= scale);
                s2.iter_mut().for_each(|v| *v *= scale);
                shift = e;
            }
            let w = (e - shift).exp();
            s0 += w;
            if want_gradient {
                let x = &data.get(order[k]).covariates;
                for (acc, xv) in s1.iter_mut().zip(x) {
                    *acc += w * xv;
                }
                if want_hessian {
                    for a in 0..p {
                        let wa = w * x[a];
                        if wa == 0.0 {
                            continue;
                        }
                        let row = &mut s2[a * p..(a + 1) * p];
                        for (acc, xb) in row.iter_mut().zip(x) {
                            *acc += wa * xb;
                        }
                    }
                }
            }
        }
        let log_denominator = shift + s0.ln();
        let mut tied_events = 0usize;
        for k in start..end {
            let ind = data.get(order[k]);
            if !ind.event {
                continue;
            }
            tied_events += 1;
            loss -= eta[k] - log_denominator;
            if want_gradient {
                for (g, (x, m)) in gradient.iter_mut().zip(ind.covariates.iter().zip(&s1)) {
                    *g -= x - m / s0;
                }
            }
        }
        if tied_events > 0 {
            if let Some(h) = hessian.as_mut() {
                // every tied event shares the same risk set
                let d = tied_events as f64;
                for a in 0..p {
                    let ma = s1[a] / s0;
                    let row = &mut h[a * p..(a + 1) * p];
                    for (b, acc) in row.iter_mut().enumerate() {
                        *acc += d * (s2[a * p + b] / s0 - ma * (s1[b] / s0));
                    }
                }
            }
        }
        n_events += tied_events;
        start = end;
    }

    if n_events == 0 {
        return Err(Error::NoEvents);
    }
    if !loss.is_finite() || gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("cox partial likelihood".to_string()));
    }
    Ok(CoxDerivatives {
        loss,
        gradient,
        hessian,
    })
}

fn all_indices(data: &Dataset) -> Vec<usize> {
    (0..data.len()).collect()
}

/// Negative Cox partial log-likelihood, Breslow handling of ties.
pub fn cox_negative_log_likelihood(data: &Dataset, model: &LinearRiskModel) -> Result<f64> {
    Ok(cox_terms(data, &all_indices(data), &model.beta, false, false)?.loss)
}

/// Gradient of [`cox_negative_log_likelihood`] with respect to `β`.
pub fn cox_gradient(data: &Dataset, model: &LinearRiskModel) -> Result<Vec<f64>> {
    Ok(cox_terms(data, &all_indices(data), &model.beta, true, false)?.gradient)
}

pub fn cox_loss_and_gradient(data: &Dataset, model: &LinearRiskModel) -> Result<(f64, Vec<f64>)> {
    let d = cox_terms(data, &all_indices(data), &model.beta, true, false)?;
    Ok((d.loss, d.gradient))
}

/// Loss, gradient and Hessian of the Cox loss.
pub fn cox_derivatives(data: &Dataset, model: &LinearRiskModel) -> Result<CoxDerivatives> {
    cox_terms(data, &all_indices(data), &model.beta, true, true)
}

/// Cox loss and gradient over a batch of row indices. A batch without events
/// contributes nothing.
pub fn cox_batch_loss_and_gradient(
    data: &Dataset,
    indices: &[usize],
    beta: &[f64],
) -> Result<(f64, Vec<f64>)> {
    match cox_terms(data, indices, beta, true, false) {
        Ok(d) => Ok((d.loss, d.gradient)),
        Err(Error::NoEvents) => Ok((0.0, vec![0.0; data.dim()])),
        Err(e) => Err(e),
    }
}

/// Sum over centers of the per-center Cox loss. Centers without events
/// contribute zero.
pub fn stratified_cox_negative_log_likelihood(
    data: &Dataset,
    partition: &FederatedPartition,
    model: &LinearRiskModel,
) -> Result<f64> {
    Ok(stratified_cox_loss_and_gradient(data, partition, model)?.0)
}

pub fn stratified_cox_loss_and_gradient(
    data: &Dataset,
    partition: &FederatedPartition,
    model: &LinearRiskModel,
) -> Result<(f64, Vec<f64>)> {
    if partition.len() != data.len() {
        return Err(Error::InvalidPartition(format!(
            "partition covers {} individuals, dataset has {}",
            partition.len(),
            data.len()
        )));
    }
    let mut loss = 0.0;
    let mut gradient = vec![0.0; data.dim()];
    for members in partition.members_by_center() {
        let (l, g) = cox_batch_loss_and_gradient(data, &members, &model.beta)?;
        loss += l;
        for (acc, v) in gradient.iter_mut().zip(&g) {
            *acc += v;
        }
    }
    Ok((loss, gradient))
}

/// Conditional hazard `σ(α(m) + βᵀφ_θ(x))` at zero-based grid index `m`.
pub fn discrete_conditional_hazard(model: &DiscreteTimeModel, x: &[f64], m: usize) -> Result<f64> {
    let alpha = model.alpha.get(m).ok_or(Error::GridIndexOutOfRange {
        index: m,
        len: model.alpha.len(),
    })?;
    if x.len() != model.risk_fn.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.risk_fn.input_dim(),
            found: x.len(),
        });
    }
    Ok(sigmoid(alpha + model.score(x)))
}

/// `t ↦ Q⌈t/Q⌉`, with `t = 0` sent to the first bin `Q`.
pub fn quantize_time(t: f64, bin_width: f64) -> f64 {
    let k = (t / bin_width).ceil().max(1.0);
    lattice_point(bin_width, k)
}

pub fn quantize_times(data: &Dataset, bin_width: f64) -> Result<Dataset> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::InvalidValue(format!(
            "bin width must be positive, got {bin_width}"
        )));
    }
    Ok(data.map_times(|t| quantize_time(t, bin_width)))
}

/// Common grid for a set of (center) datasets.
///
/// With a bin width `Q` the grid is `{Q, 2Q, …, Q⌈t_max/Q⌉}`, where `t_max`
/// is the maximum of the per-dataset maxima. Without one, the grid is the
/// sorted set of unique event times.
pub fn build_time_grid(datasets: &[&Dataset], bin_width: Option<f64>) -> Result<TimeGrid> {
    if datasets.iter().all(|d| d.is_empty()) {
        return Err(Error::EmptyInput("no individuals to build a time grid from"));
    }
    match bin_width {
        Some(q) => {
            if !(q > 0.0 && q.is_finite()) {
                return Err(Error::InvalidValue(format!(
                    "bin width must be positive, got {q}"
                )));
            }
            let t_max = datasets
                .iter()
                .map(|d| d.max_time())
                .fold(f64::NEG_INFINITY, f64::max);
            let bins = (t_max / q).ceil().max(1.0) as usize;
            let times = (1..=bins).map(|k| lattice_point(q, k as f64)).collect();
            TimeGrid::new(times, Some(q))
        }
        None => {
            let mut times: Vec<f64> = datasets
                .iter()
                .flat_map(|d| d.individuals().iter())
                .filter(|ind| ind.event)
                .map(|ind| ind.time)
                .collect();
            if times.is_empty() {
                return Err(Error::EmptyInput(
                    "no event times to build an event-time grid from",
                ));
            }
            times.sort_by(|a, b| a.partial_cmp(b).expect("times are finite"));
            times.dedup();
            TimeGrid::new(times, None)
        }
    }
}

/// Per-event comparison between the discrete-time contribution evaluated at
/// its optimal bias and the corresponding Cox contribution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventContribution {
    pub individual: usize,
    pub optimal_bias: f64,
    pub discrete: f64,
    pub cox: f64,
}

impl EventContribution {
    pub fn gap(&self) -> f64 {
        (self.discrete - self.cox).abs()
    }
}

const BIAS_TOLERANCE: f64 = 1e-12;
const MAX_FIXED_POINT_ITERATIONS: usize = 10_000;
const MAX_NEWTON_ITERATIONS: usize = 200;

/// Solves `α = −log Σ_j e^{a_j} / (1 + e^{α + a_j + shift})` for the risk
/// set logits `a_j`. Damped fixed-point iteration first, Newton on the
/// residual if that stalls.
fn optimal_bias(logits: &[f64], shift: f64) -> Result<f64> {
    let map = |alpha: f64| -> f64 {
        -log_sum_exp(logits.iter().map(|&a| a - softplus(alpha + a + shift)))
    };
    let mut alpha = -log_sum_exp(logits.iter().copied());
    for _ in 0..MAX_FIXED_POINT_ITERATIONS {
        let next = 0.5 * alpha + 0.5 * map(alpha);
        if !next.is_finite() {
            break;
        }
        if (next - alpha).abs() < BIAS_TOLERANCE {
            return Ok(next);
        }
        alpha = next;
    }
    // residual r(α) = α − g(α), r'(α) = 1 − Σ_j w_j σ(α + a_j + shift)
    for _ in 0..MAX_NEWTON_ITERATIONS {
        let terms: Vec<f64> = logits.iter().map(|&a| a - softplus(alpha + a + shift)).collect();
        let lse = log_sum_exp(terms.iter().copied());
        let residual = alpha + lse;
        let slope: f64 = logits
            .iter()
            .zip(&terms)
            .map(|(&a, &t)| (t - lse).exp() * sigmoid(alpha + a + shift))
            .sum();
        let derivative = 1.0 - slope;
        if !(derivative > 0.0) || !residual.is_finite() {
            break;
        }
        let step = residual / derivative;
        alpha -= step;
        if step.abs() < BIAS_TOLERANCE {
            return Ok(alpha);
        }
    }
    Err(Error::FixedPointDivergence {
        iterations: MAX_FIXED_POINT_ITERATIONS,
    })
}

/// For every event, solves for the optimal per-bin bias with all logits in
/// the hazard offset by `shift` and compares the discrete-time contribution
/// `α* + a_i − Σ_{j: t_j ≥ t_i} log(1 + e^{α* + a_j + shift})` with the Cox
/// contribution `a_i − log Σ_{j: t_j ≥ t_i} e^{a_j}`, where `a = βᵀx`.
pub fn event_contributions(
    data: &Dataset,
    beta: &[f64],
    shift: f64,
) -> Result<Vec<EventContribution>> {
    if beta.len() != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: data.dim(),
            found: beta.len(),
        });
    }
    if data.n_events() == 0 {
        return Err(Error::NoEvents);
    }
    let logits: Vec<f64> = data
        .individuals()
        .iter()
        .map(|ind| dot(beta, &ind.covariates))
        .collect();
    let mut out = Vec::new();
    for (i, ind) in data.individuals().iter().enumerate() {
        if !ind.event {
            continue;
        }
        let risk: Vec<f64> = data
            .individuals()
            .iter()
            .zip(&logits)
            .filter(|(other, _)| other.time >= ind.time)
            .map(|(_, &a)| a)
            .collect();
        let alpha = optimal_bias(&risk, shift)?;
        let discrete =
            alpha + logits[i] - risk.iter().map(|&a| softplus(alpha + a + shift)).sum::<f64>();
        let cox = logits[i] - log_sum_exp(risk.iter().copied());
        out.push(EventContribution {
            individual: i,
            optimal_bias: alpha,
            discrete,
            cox,
        });
    }
    Ok(out)
}

/// Largest per-event gap returned by [`event_contributions`].
pub fn contribution_gap(data: &Dataset, beta: &[f64], shift: f64) -> Result<f64> {
    Ok(event_contributions(data, beta, shift)?
        .iter()
        .map(EventContribution::gap)
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ind(x: Vec<f64>, t: f64, e: bool) -> Individual {
        Individual::new(x, t, e).unwrap()
    }

    fn random_dataset(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Dataset {
        let mut rows = Vec::new();
        for _ in 0..n {
            let x = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
            // coarse times so that ties occur
            let t = rng.random_range(0..8) as f64;
            rows.push(ind(x, t, rng.random_bool(0.6)));
        }
        if !rows.iter().any(|r| r.event) {
            rows[0].event = true;
        }
        Dataset::new(rows).unwrap()
    }

    // term-by-term evaluation of the partial likelihood
    fn brute_force_loss(data: &Dataset, beta: &[f64]) -> f64 {
        let mut loss = 0.0;
        for i in data.individuals() {
            if !i.event {
                continue;
            }
            let mut denom = 0.0;
            for j in data.individuals() {
                if j.time >= i.time {
                    denom += dot(beta, &j.covariates).exp();
                }
            }
            loss -= dot(beta, &i.covariates) - denom.ln();
        }
        loss
    }

    #[test]
    fn two_individuals_at_zero_beta() {
        let data = Dataset::new(vec![ind(vec![0.3, -1.0], 1.0, true), ind(vec![2.0, 0.5], 2.0, false)])
            .unwrap();
        let model = LinearRiskModel::zeros(2);
        let loss = cox_negative_log_likelihood(&data, &model).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);
        let g = cox_gradient(&data, &model).unwrap();
        assert!((g[0] - (2.0 - 0.3) / 2.0).abs() < 1e-15);
        assert!((g[1] - (0.5 + 1.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn single_individual_contributes_nothing() {
        let data = Dataset::new(vec![ind(vec![1.5, -2.0], 3.0, true)]).unwrap();
        let model = LinearRiskModel::new(vec![0.7, 1.1]);
        assert_eq!(cox_negative_log_likelihood(&data, &model).unwrap(), 0.0);
        assert!(cox_gradient(&data, &model).unwrap().iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn no_events_is_an_error() {
        let data = Dataset::new(vec![ind(vec![1.0], 1.0, false)]).unwrap();
        assert!(matches!(
            cox_negative_log_likelihood(&data, &LinearRiskModel::zeros(1)),
            Err(Error::NoEvents)
        ));
    }

    #[test]
    fn matches_brute_force_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let data = random_dataset(&mut rng, 10, 3);
            let beta: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let fast = cox_negative_log_likelihood(&data, &LinearRiskModel::new(beta.clone())).unwrap();
            let slow = brute_force_loss(&data, &beta);
            assert!((fast - slow).abs() <= 1e-10 * slow.abs().max(1.0), "{fast} vs {slow}");
        }
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let data = Dataset::new(vec![
            ind(vec![800.0], 1.0, true),
            ind(vec![-800.0], 2.0, true),
            ind(vec![0.0], 3.0, false),
        ])
        .unwrap();
        let loss = cox_negative_log_likelihood(&data, &LinearRiskModel::new(vec![1.0])).unwrap();
        assert!(loss.is_finite());
        assert!((loss - brute_force_stable(&data, 1.0)).abs() < 1e-9);
    }

    fn brute_force_stable(data: &Dataset, b: f64) -> f64 {
        let mut loss = 0.0;
        for i in data.individuals() {
            if i.event {
                let lse = log_sum_exp(
                    data.individuals()
                        .iter()
                        .filter(|j| j.time >= i.time)
                        .map(|j| b * j.covariates[0]),
                );
                loss -= b * i.covariates[0] - lse;
            }
        }
        loss
    }

    #[test]
    fn hessian_matches_gradient_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data = random_dataset(&mut rng, 15, 3);
        let beta = vec![0.4, -0.3, 0.8];
        let d = cox_derivatives(&data, &LinearRiskModel::new(beta.clone())).unwrap();
        let h = d.hessian.unwrap();
        let step = 1e-6;
        for b in 0..3 {
            let mut plus = beta.clone();
            plus[b] += step;
            let mut minus = beta.clone();
            minus[b] -= step;
            let gp = cox_gradient(&data, &LinearRiskModel::new(plus)).unwrap();
            let gm = cox_gradient(&data, &LinearRiskModel::new(minus)).unwrap();
            for a in 0..3 {
                let fd = (gp[a] - gm[a]) / (2.0 * step);
                assert!((fd - h[a * 3 + b]).abs() < 1e-6 * fd.abs().max(1.0));
            }
        }
    }

    #[test]
    fn sigmoid_is_stable_in_the_tails() {
        assert_eq!(sigmoid(0.0), 0.5);
        let tiny = sigmoid(-40.0);
        assert!(tiny > 0.0 && tiny < 1e-15);
        assert_eq!(sigmoid(800.0), 1.0);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!((softplus(-40.0) - (-40f64).exp()).abs() < 1e-30);
        assert_eq!(softplus(1000.0), 1000.0);
    }

    #[test]
    fn quantization_examples() {
        assert_eq!(quantize_time(45.0, 30.0), 60.0);
        assert_eq!(quantize_time(30.0, 30.0), 30.0);
        assert_eq!(quantize_time(0.0, 30.0), 30.0);
        let data = Dataset::new(vec![ind(vec![0.0], 0.0, true), ind(vec![0.0], 45.0, false)]).unwrap();
        let q = quantize_times(&data, 30.0).unwrap();
        assert_eq!(q.times(), vec![30.0, 60.0]);
        assert_eq!(q.events(), vec![true, false]);
        let grid = build_time_grid(&[&q], Some(30.0)).unwrap();
        assert_eq!(grid.index_of(q.get(0).time), Some(0));
        assert!(quantize_times(&data, 0.0).is_err());
    }

    #[test]
    fn grid_examples() {
        let a = Dataset::new(vec![ind(vec![0.0], 95.0, true), ind(vec![0.0], 10.0, false)]).unwrap();
        let b = Dataset::new(vec![ind(vec![0.0], 260.0, false)]).unwrap();
        let grid = build_time_grid(&[&a, &b], Some(30.0)).unwrap();
        assert_eq!(grid.len(), 9);
        assert_eq!(grid.times()[0], 30.0);
        assert_eq!(grid.times()[8], 270.0);

        let c = Dataset::new(
            [1.0, 2.0, 2.0, 5.0]
                .iter()
                .map(|&t| ind(vec![0.0], t, true))
                .collect(),
        )
        .unwrap();
        let grid = build_time_grid(&[&c], None).unwrap();
        assert_eq!(grid.times(), &[1.0, 2.0, 5.0]);
        assert!(build_time_grid(&[], None).is_err());
    }

    #[test]
    fn grid_rejects_bad_lattices() {
        assert!(TimeGrid::new(vec![1.0, 1.0], None).is_err());
        assert!(TimeGrid::new(vec![30.0, 45.0], Some(30.0)).is_err());
        assert!(TimeGrid::new(vec![], None).is_err());
    }

    #[test]
    fn hazard_examples() {
        let mut model = DiscreteTimeModel::new(3, RiskFunction::identity(2));
        assert_eq!(discrete_conditional_hazard(&model, &[1.0, 2.0], 0).unwrap(), 0.5);
        let p: f64 = 0.23;
        model.alpha[1] = (p / (1.0 - p)).ln();
        let h = discrete_conditional_hazard(&model, &[1.0, 2.0], 1).unwrap();
        assert!((h - p).abs() < 1e-15);
        assert!((model.baseline_hazard(1).unwrap() - p).abs() < 1e-15);
        model.alpha[2] = -40.0;
        let h = discrete_conditional_hazard(&model, &[1.0, 2.0], 2).unwrap();
        assert!(h > 0.0 && h < 1e-15);
        assert!(matches!(
            discrete_conditional_hazard(&model, &[1.0, 2.0], 3),
            Err(Error::GridIndexOutOfRange { .. })
        ));
    }

    #[test]
    fn single_event_contribution_is_finite() {
        let data = Dataset::new(vec![ind(vec![0.5, -1.0], 1.0, true)]).unwrap();
        let contributions = event_contributions(&data, &[0.3, 0.2], -5.0).unwrap();
        assert_eq!(contributions.len(), 1);
        assert_eq!(contributions[0].cox, 0.0);
        assert!(contributions[0].gap().is_finite());
        // closed form α* = −a − log(1 − e^shift)
        let a = 0.3 * 0.5 - 0.2;
        let expected = -a - (1.0 - (-5f64).exp()).ln();
        assert!((contributions[0].optimal_bias - expected).abs() < 1e-10);
    }

    #[test]
    fn fixed_point_satisfies_its_equation() {
        let logits = [0.3, -1.2, 0.8, 0.0];
        for shift in [-1.0, -5.0, -20.0] {
            let alpha = optimal_bias(&logits, shift).unwrap();
            let rhs = -logits
                .iter()
                .map(|&a| a.exp() / (1.0 + (alpha + a + shift).exp()))
                .sum::<f64>()
                .ln();
            assert!((alpha - rhs).abs() < 1e-10);
        }
    }
}
