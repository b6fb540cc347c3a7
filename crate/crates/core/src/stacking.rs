//! Reduction of discrete-time survival fitting to binary classification.
//!
//! Every individual is expanded into one sample per grid time at which it is
//! still at risk. The one-hot time encoding is never materialized: a sample
//! only stores its grid index, which selects the bias `α(m)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::survival::{dot, sigmoid, softplus, Dataset, DiscreteTimeModel, TimeGrid};

/// Negative slope of the leaky-ReLU hidden activations.
pub const LEAKY_SLOPE: f64 = 0.1;

/// Intermediate representation `φ_θ : R^P → R^P'`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RiskFunction {
    Identity { dim: usize },
    Mlp(Mlp),
}

impl RiskFunction {
    pub fn identity(dim: usize) -> Self {
        RiskFunction::Identity { dim }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            RiskFunction::Identity { dim } => *dim,
            RiskFunction::Mlp(mlp) => mlp.dims[0],
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            RiskFunction::Identity { dim } => *dim,
            RiskFunction::Mlp(mlp) => *mlp.dims.last().expect("mlp has layers"),
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            RiskFunction::Identity { .. } => 0,
            RiskFunction::Mlp(mlp) => mlp.weights.len(),
        }
    }

    pub fn params(&self) -> &[f64] {
        match self {
            RiskFunction::Identity { .. } => &[],
            RiskFunction::Mlp(mlp) => &mlp.weights,
        }
    }

    pub(crate) fn set_params(&mut self, params: &[f64]) {
        if let RiskFunction::Mlp(mlp) = self {
            mlp.weights.copy_from_slice(params);
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        match self {
            RiskFunction::Identity { .. } => x.to_vec(),
            RiskFunction::Mlp(mlp) => mlp.forward(x),
        }
    }
}

/// Fully connected network with leaky-ReLU between layers and a linear last
/// layer. Weights are stored layer by layer, each as a row-major
/// `out × in` matrix followed by its bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    dims: Vec<usize>,
    weights: Vec<f64>,
}

fn leaky(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        LEAKY_SLOPE * z
    }
}

fn leaky_slope(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

impl Mlp {
    fn param_count(dims: &[usize]) -> usize {
        dims.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }

    fn check_dims(dims: &[usize]) -> Result<()> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidValue(format!(
                "mlp needs at least an input and an output layer of positive width, got {dims:?}"
            )));
        }
        Ok(())
    }

    pub fn from_weights(dims: Vec<usize>, weights: Vec<f64>) -> Result<Self> {
        Self::check_dims(&dims)?;
        let expected = Self::param_count(&dims);
        if weights.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: weights.len(),
            });
        }
        Ok(Self { dims, weights })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        Self::check_dims(&dims)?;
        let n = Self::param_count(&dims);
        Self::from_weights(dims, vec![0.0; n])
    }

    /// Uniform in `±√(6 / (fan_in + fan_out))`, zero biases.
    pub fn glorot(dims: Vec<usize>, seed: u64) -> Result<Self> {
        let mut mlp = Self::zeros(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut offset = 0;
        for w in mlp.dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in &mut mlp.weights[offset..offset + fan_in * fan_out] {
                *v = rng.random_range(-bound..bound);
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(mlp)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cached(x).1.pop().expect("mlp has layers")
    }

    /// Pre-activations per layer and activations per layer (the last entry of
    /// the latter is the output).
    fn forward_cached(&self, x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let n_layers = self.dims.len() - 1;
        let mut pre = Vec::with_capacity(n_layers);
        let mut act: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
        let mut offset = 0;
        for l in 0..n_layers {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let input = if l == 0 { x } else { &act[l - 1][..] };
            let w = &self.weights[offset..offset + fan_in * fan_out];
            let b = &self.weights[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            let z: Vec<f64> = (0..fan_out)
                .map(|o| dot(&w[o * fan_in..(o + 1) * fan_in], input) + b[o])
                .collect();
            let a = if l + 1 == n_layers {
                z.clone()
            } else {
                z.iter().map(|&v| leaky(v)).collect()
            };
            pre.push(z);
            act.push(a);
            offset += fan_in * fan_out + fan_out;
        }
        (pre, act)
    }

    /// Adds `∂(g_outᵀ φ(x))/∂θ` to `grad`.
    fn accumulate_gradient(&self, x: &[f64], g_out: &[f64], grad: &mut [f64]) {
        let (pre, act) = self.forward_cached(x);
        let n_layers = self.dims.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut offset = 0;
        for w in self.dims.windows(2) {
            offsets.push(offset);
            offset += w[0] * w[1] + w[1];
        }
        let mut delta = g_out.to_vec();
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            if l + 1 != n_layers {
                for (d, z) in delta.iter_mut().zip(&pre[l]) {
                    *d *= leaky_slope(*z);
                }
            }
            let input = if l == 0 { x } else { &act[l - 1][..] };
            let base = offsets[l];
            for o in 0..fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad[base + o * fan_in..base + (o + 1) * fan_in];
                for (g, v) in row.iter_mut().zip(input) {
                    *g += d * v;
                }
                grad[base + fan_in * fan_out + o] += d;
            }
            if l > 0 {
                let w = &self.weights[base..base + fan_in * fan_out];
                let mut next = vec![0.0; fan_in];
                for o in 0..fan_out {
                    let d = delta[o];
                    for (n, wv) in next.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                        *n += d * wv;
                    }
                }
                delta = next;
            }
        }
    }
}

/// One stacked sample: individual `base_index` at grid index `grid_index`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackedSample {
    pub grid_index: usize,
    pub base_index: usize,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedDataset {
    pub samples: Vec<StackedSample>,
    pub grid: TimeGrid,
    /// Weight applied to positive samples in the loss.
    pub pos_weight: f64,
    pub n_positive: usize,
    pub n_negative: usize,
    /// Number of stacked samples generated by each base individual.
    pub per_individual: Vec<usize>,
}

impl StackedDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Expands `data` over `grid`: one negative sample for each `s(m) < t_i`
/// and, for events, one positive sample at `s(m) = t_i`.
///
/// Event times must lie on the grid. On a lattice grid (one with a bin
/// width) censoring times must lie on it as well; on an event-time grid a
/// censored individual simply contributes the grid times preceding its
/// censoring time.
pub fn build_stacked_dataset(data: &Dataset, grid: &TimeGrid, weighted: bool) -> Result<StackedDataset> {
    let mut samples = Vec::new();
    let mut per_individual = Vec::with_capacity(data.len());
    let mut n_positive = 0;
    let lattice = grid.bin_width().is_some();
    for (i, ind) in data.individuals().iter().enumerate() {
        let before = grid.count_before(ind.time);
        let on_grid = grid.index_of(ind.time);
        if on_grid.is_none() && (ind.event || lattice) {
            return Err(Error::OffGrid {
                individual: i,
                time: ind.time,
            });
        }
        samples.extend((0..before).map(|m| StackedSample {
            grid_index: m,
            base_index: i,
            label: false,
        }));
        let mut count = before;
        if ind.event {
            samples.push(StackedSample {
                grid_index: on_grid.expect("checked above"),
                base_index: i,
                label: true,
            });
            n_positive += 1;
            count += 1;
        }
        per_individual.push(count);
    }
    let n_negative = samples.len() - n_positive;
    let pos_weight = if weighted {
        if n_positive == 0 {
            return Err(Error::NoPositiveSamples);
        }
        n_negative as f64 / n_positive as f64
    } else {
        1.0
    };
    Ok(StackedDataset {
        samples,
        grid: grid.clone(),
        pos_weight,
        n_positive,
        n_negative,
        per_individual,
    })
}

/// Pre-sigmoid output `α(m) + βᵀφ_θ(x_i)` of the stacked classifier.
pub fn stacked_logit(model: &DiscreteTimeModel, sample: &StackedSample, base: &Dataset) -> f64 {
    model.alpha[sample.grid_index] + model.score(&base.get(sample.base_index).covariates)
}

/// Weighted binary cross-entropy in logit form, `w(y)·(softplus(z) − y z)`.
pub fn weighted_bce(logit: f64, label: bool, pos_weight: f64) -> f64 {
    if label {
        pos_weight * (softplus(logit) - logit)
    } else {
        softplus(logit)
    }
}

/// Summed weighted BCE over `batch` and its analytic gradient over the flat
/// `[α | β | θ]` layout of [`DiscreteTimeModel::to_flat`].
pub fn stacked_bce_loss_and_gradient(
    model: &DiscreteTimeModel,
    batch: &[StackedSample],
    base: &Dataset,
    pos_weight: f64,
) -> (f64, Vec<f64>) {
    bce_accumulate(model, batch.iter(), base, pos_weight)
}

pub(crate) fn bce_accumulate<'a>(
    model: &DiscreteTimeModel,
    batch: impl Iterator<Item = &'a StackedSample>,
    base: &Dataset,
    pos_weight: f64,
) -> (f64, Vec<f64>) {
    let t = model.alpha.len();
    let p_out = model.beta.len();
    let mut grad = vec![0.0; model.n_params()];
    let mut loss = 0.0;
    // the items of one individual share φ(x) and βᵀφ(x); residuals are summed per individual
    // and pushed through φ once, which is exact because the backward pass is linear in them
    let mut slots: Vec<Option<usize>> = vec![None; base.len()];
    let mut touched: Vec<(usize, Option<Vec<f64>>, f64, f64)> = Vec::new();
    for sample in batch {
        let slot = *slots[sample.base_index].get_or_insert_with(|| {
            let x = &base.get(sample.base_index).covariates;
            let (phi, eta) = match &model.risk_fn {
                RiskFunction::Identity { .. } => (None, dot(&model.beta, x)),
                RiskFunction::Mlp(mlp) => {
                    let phi = mlp.forward(x);
                    let eta = dot(&model.beta, &phi);
                    (Some(phi), eta)
                }
            };
            touched.push((sample.base_index, phi, eta, 0.0));
            touched.len() - 1
        });
        let entry = &mut touched[slot];
        let z = model.alpha[sample.grid_index] + entry.2;
        let w = if sample.label { pos_weight } else { 1.0 };
        let r = w * (sigmoid(z) - if sample.label { 1.0 } else { 0.0 });
        loss += weighted_bce(z, sample.label, pos_weight);
        grad[sample.grid_index] += r;
        entry.3 += r;
    }
    let (beta_grad, theta_grad) = grad[t..].split_at_mut(p_out);
    for (i, phi, _, r_sum) in &touched {
        let x = &base.get(*i).covariates;
        let features = phi.as_deref().unwrap_or(x);
        for (g, v) in beta_grad.iter_mut().zip(features) {
            *g += r_sum * v;
        }
        if let RiskFunction::Mlp(mlp) = &model.risk_fn {
            let g_out: Vec<f64> = model.beta.iter().map(|b| r_sum * b).collect();
            mlp.accumulate_gradient(x, &g_out, theta_grad);
        }
    }
    (loss, grad)
}
