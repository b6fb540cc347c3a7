//! WebDISCO-style distributed Cox gradient: centers ship per-time risk-set
//! aggregates, the server assembles the pooled gradient from them. Also the
//! telescoping attack showing that those aggregates can expose individual
//! covariates.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::survival::{dot, Dataset, TimeGrid};

/// What one center sends for one value of `β`, per grid index `m`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WebDiscoSummary {
    /// The `β` the server broadcast for this round.
    pub beta: Vec<f64>,
    /// `ζ(R_k(m)) = Σ_{i ∈ R_k(m)} e^{βᵀx_i}`.
    pub zeta: Vec<f64>,
    /// `μ(R_k(m)) = Σ_{i ∈ R_k(m)} x_i e^{βᵀx_i}`.
    pub mu: Vec<Vec<f64>>,
    /// `|D_k(m)|`.
    pub event_count: Vec<usize>,
    /// `Σ_{i ∈ D_k(m)} x_i`; independent of `β`.
    pub event_covariate_sum: Vec<Vec<f64>>,
}

impl WebDiscoSummary {
    pub fn grid_len(&self) -> usize {
        self.zeta.len()
    }

    pub fn dim(&self) -> usize {
        self.beta.len()
    }

    /// Real values carried each round: `ζ`, `μ` and the event count for
    /// every grid time, `T·(P + 2)`.
    pub fn per_round_values(&self) -> usize {
        self.zeta.len() + self.mu.iter().map(Vec::len).sum::<usize>() + self.event_count.len()
    }

    /// Values that only need to be sent once (`Σ_{D} x`), `T·P`.
    pub fn one_time_values(&self) -> usize {
        self.event_covariate_sum.iter().map(Vec::len).sum()
    }
}

/// Per-round values shipped by all centers together.
pub fn summary_round_values(summaries: &[WebDiscoSummary]) -> usize {
    summaries.iter().map(WebDiscoSummary::per_round_values).sum()
}

/// Risk-set aggregates of one center over `grid`. Event times must be grid
/// times; censoring times may fall anywhere.
pub fn compute_center_summary(data: &Dataset, grid: &TimeGrid, beta: &[f64]) -> Result<WebDiscoSummary> {
    let p = data.dim();
    if beta.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: beta.len(),
        });
    }
    let t = grid.len();
    // bucket b collects the individuals whose last risk set is index b
    let mut zeta = vec![0.0; t];
    let mut mu = vec![vec![0.0; p]; t];
    let mut event_count = vec![0; t];
    let mut event_covariate_sum = vec![vec![0.0; p]; t];
    for (i, ind) in data.individuals().iter().enumerate() {
        if ind.event {
            let m = grid.index_of(ind.time).ok_or(Error::OffGrid {
                individual: i,
                time: ind.time,
            })?;
            event_count[m] += 1;
            for (s, x) in event_covariate_sum[m].iter_mut().zip(&ind.covariates) {
                *s += x;
            }
        }
        let last = grid.count_up_to(ind.time);
        if last == 0 {
            continue;
        }
        let w = dot(beta, &ind.covariates).exp();
        zeta[last - 1] += w;
        for (s, x) in mu[last - 1].iter_mut().zip(&ind.covariates) {
            *s += w * x;
        }
    }
    for m in (0..t.saturating_sub(1)).rev() {
        zeta[m] += zeta[m + 1];
        let (head, tail) = mu.split_at_mut(m + 1);
        for (s, v) in head[m].iter_mut().zip(&tail[0]) {
            *s += v;
        }
    }
    if zeta.iter().any(|z| !z.is_finite()) {
        return Err(Error::Numeric("risk-set aggregate".to_string()));
    }
    Ok(WebDiscoSummary {
        beta: beta.to_vec(),
        zeta,
        mu,
        event_count,
        event_covariate_sum,
    })
}

/// Server-side gradient of the negative partial log-likelihood:
/// `Σ_m (Σ_k |D_k(m)|)·(Σ_k μ_k(m))/(Σ_k ζ_k(m)) − Σ_{k,m} Σ_{D_k(m)} x`.
/// Grid times without events are skipped.
pub fn assemble_global_gradient(summaries: &[WebDiscoSummary]) -> Result<Vec<f64>> {
    let first = summaries
        .first()
        .ok_or(Error::EmptyInput("no center summaries to assemble"))?;
    let (t, p) = (first.grid_len(), first.dim());
    for s in summaries {
        if s.grid_len() != t {
            return Err(Error::DimensionMismatch {
                expected: t,
                found: s.grid_len(),
            });
        }
        if s.dim() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: s.dim(),
            });
        }
    }
    let mut gradient = vec![0.0; p];
    for m in 0..t {
        let events: usize = summaries.iter().map(|s| s.event_count[m]).sum();
        if events == 0 {
            continue;
        }
        let zeta: f64 = summaries.iter().map(|s| s.zeta[m]).sum();
        if !(zeta > 0.0) {
            return Err(Error::InconsistentSummary { index: m });
        }
        for (j, g) in gradient.iter_mut().enumerate() {
            let mu: f64 = summaries.iter().map(|s| s.mu[m][j]).sum();
            let observed: f64 = summaries.iter().map(|s| s.event_covariate_sum[m][j]).sum();
            *g += events as f64 * mu / zeta - observed;
        }
    }
    Ok(gradient)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reconstruction {
    pub grid_index: usize,
    pub covariates: Vec<f64>,
}

/// Largest relative mismatch tolerated between `e^{βᵀx̂}` and the
/// telescoped `ζ`, scaled by the cancellation in the subtraction.
fn singleton_tolerance(zeta_hi: f64, zeta_lo: f64, departing: f64, beta: &[f64], x: &[f64]) -> f64 {
    let cancellation = (zeta_hi + zeta_lo) / departing;
    let exponent: f64 = beta.iter().zip(x).map(|(b, v)| (b * v).abs()).sum();
    1e-13 + 64.0 * f64::EPSILON * cancellation * (1.0 + exponent)
}

/// Telescopes consecutive risk-set aggregates of one center,
/// `ζ(R(m)) − ζ(R(m+1))` and likewise for `μ`, which aggregate exactly the
/// individuals leaving the risk set between `s(m)` and `s(m+1)`. When that
/// departing set is a single individual the ratio `μ/ζ` is its covariate
/// vector.
///
/// A departing set is accepted as a singleton only when the grid time has
/// one event and `e^{βᵀ(μ/ζ)} = ζ` holds in every round of the stream; for
/// two or more departures `βᵀ(μ/ζ)` is a weighted mean of their logits and
/// falls strictly below `log ζ`, so sets mixing events with censorings are
/// never reported.
pub fn telescoping_attack(stream: &[WebDiscoSummary]) -> Vec<Reconstruction> {
    let Some(first) = stream.first() else {
        return Vec::new();
    };
    let t = first.grid_len();
    let mut out = Vec::new();
    for m in 0..t {
        if first.event_count[m] != 1 {
            continue;
        }
        let mut estimate: Option<Vec<f64>> = None;
        let mut consistent = true;
        for summary in stream {
            let zeta_lo = if m + 1 < t { summary.zeta[m + 1] } else { 0.0 };
            let departing = summary.zeta[m] - zeta_lo;
            if !(departing > 0.0) {
                consistent = false;
                break;
            }
            let x: Vec<f64> = (0..summary.dim())
                .map(|j| {
                    let lo = if m + 1 < t { summary.mu[m + 1][j] } else { 0.0 };
                    (summary.mu[m][j] - lo) / departing
                })
                .collect();
            let implied = dot(&summary.beta, &x).exp();
            let tol = singleton_tolerance(summary.zeta[m], zeta_lo, departing, &summary.beta, &x);
            if !((implied - departing).abs() <= tol * departing) {
                consistent = false;
                break;
            }
            estimate.get_or_insert(x);
        }
        if consistent {
            if let Some(covariates) = estimate {
                out.push(Reconstruction {
                    grid_index: m,
                    covariates,
                });
            }
        }
    }
    out
}

/// Parameters of a center crafted to expose the telescoping leak.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdversarialConfig {
    /// Individuals besides the planted one.
    pub n_individuals: usize,
    pub dim: usize,
    pub censored_fraction: f64,
    /// Probability that an observed time is copied from an earlier
    /// individual, producing tied departures.
    pub tie_fraction: f64,
    /// Rounds of `β` the center answers.
    pub rounds: usize,
    pub seed: u64,
}

impl Default for AdversarialConfig {
    fn default() -> Self {
        Self {
            n_individuals: 30,
            dim: 4,
            censored_fraction: 0.4,
            tie_fraction: 0.2,
            rounds: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialCenter {
    pub data: Dataset,
    /// Event times of this center plus outside grid times.
    pub grid: TimeGrid,
    /// Index of the individual whose event is the last grid time.
    pub planted: usize,
    pub stream: Vec<WebDiscoSummary>,
}

/// A center mixing events, censorings and ties over a grid that also
/// carries times from elsewhere, with one planted individual whose event
/// is the latest time, so that it leaves the risk set alone.
pub fn adversarial_center(config: &AdversarialConfig) -> Result<AdversarialCenter> {
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, Exp, StandardNormal};

    if config.dim == 0 || config.rounds == 0 {
        return Err(Error::InvalidValue("dimension and rounds must be at least 1".to_string()));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed);
    let exp = Exp::new(1.0).expect("positive rate");
    let mut individuals = Vec::with_capacity(config.n_individuals + 1);
    let mut times: Vec<f64> = Vec::new();
    for _ in 0..config.n_individuals {
        let x: Vec<f64> = (0..config.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let t = if !times.is_empty() && rng.random_bool(config.tie_fraction) {
            times[rng.random_range(0..times.len())]
        } else {
            exp.sample(&mut rng)
        };
        times.push(t);
        let event = !rng.random_bool(config.censored_fraction);
        individuals.push(crate::survival::Individual::new(x, t, event)?);
    }
    let last = times.iter().copied().fold(0.0, f64::max) + 1.0;
    let planted_x: Vec<f64> = (0..config.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    individuals.push(crate::survival::Individual::new(planted_x, last, true)?);
    let planted = individuals.len() - 1;

    let mut grid_times: Vec<f64> = individuals.iter().filter(|i| i.event).map(|i| i.time).collect();
    // event times of the other centers
    grid_times.extend((0..config.n_individuals / 3).map(|_| exp.sample(&mut rng)));
    grid_times.sort_by(f64::total_cmp);
    grid_times.dedup();
    let grid = TimeGrid::new(grid_times, None)?;
    let data = Dataset::new(individuals)?;
    let stream = (0..config.rounds)
        .map(|_| {
            let beta: Vec<f64> = (0..config.dim)
                .map(|_| 0.5 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                .collect();
            compute_center_summary(&data, &grid, &beta)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AdversarialCenter {
        data,
        grid,
        planted,
        stream,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackOutcome {
    pub grid_index: usize,
    /// The individual that actually left the risk set alone, if any.
    pub individual: Option<usize>,
    /// Max-norm error against that individual's covariates.
    pub error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackReport {
    pub outcomes: Vec<AttackOutcome>,
    pub max_error: f64,
    /// Reconstructions whose departing set was not a single individual.
    pub false_reconstructions: usize,
}

/// Runs the attack and scores it against the center's actual departures.
pub fn evaluate_attack(data: &Dataset, grid: &TimeGrid, stream: &[WebDiscoSummary]) -> AttackReport {
    let mut departures = vec![Vec::new(); grid.len()];
    for (i, ind) in data.individuals().iter().enumerate() {
        let last = grid.count_up_to(ind.time);
        if last > 0 {
            departures[last - 1].push(i);
        }
    }
    let mut outcomes = Vec::new();
    let mut max_error: f64 = 0.0;
    let mut false_reconstructions = 0;
    for rec in telescoping_attack(stream) {
        let leaving = &departures[rec.grid_index];
        if let [i] = leaving[..] {
            let error = rec
                .covariates
                .iter()
                .zip(&data.get(i).covariates)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            max_error = max_error.max(error);
            outcomes.push(AttackOutcome {
                grid_index: rec.grid_index,
                individual: Some(i),
                error: Some(error),
            });
        } else {
            false_reconstructions += 1;
            outcomes.push(AttackOutcome {
                grid_index: rec.grid_index,
                individual: None,
                error: None,
            });
        }
    }
    AttackReport {
        outcomes,
        max_error,
        false_reconstructions,
    }
}
