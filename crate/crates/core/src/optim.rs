//! First-order optimizers driving the iterative schemes, and the Newton
//! solver used for the linear Cox baselines.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::survival::{cox_derivatives, cox_negative_log_likelihood, CoxDerivatives, Dataset, LinearRiskModel};

pub trait Optimizer: Send {
    /// Applies one update to `params` given `gradient`.
    fn step(&mut self, params: &mut [f64], gradient: &[f64]) -> Result<()>;
    fn learning_rate(&self) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

impl AdamState {
    pub fn new(config: AdamConfig, n_params: usize) -> Self {
        Self {
            config,
            step: 0,
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
        }
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.second_moment
    }
}

impl Optimizer for AdamState {
    fn step(&mut self, params: &mut [f64], gradient: &[f64]) -> Result<()> {
        let n = self.first_moment.len();
        if params.len() != n || gradient.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: if params.len() != n { params.len() } else { gradient.len() },
            });
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let correction1 = 1.0 - beta1.powi(self.step as i32);
        let correction2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(gradient)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / correction1;
            let v_hat = *v / correction2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
        Ok(())
    }

    fn learning_rate(&self) -> f64 {
        self.config.learning_rate
    }
}

/// Plain gradient descent, `θ ← θ − lr·g`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sgd {
    pub learning_rate: f64,
}

impl Optimizer for Sgd {
    fn step(&mut self, params: &mut [f64], gradient: &[f64]) -> Result<()> {
        if params.len() != gradient.len() {
            return Err(Error::DimensionMismatch {
                expected: params.len(),
                found: gradient.len(),
            });
        }
        for (p, g) in params.iter_mut().zip(gradient) {
            *p -= self.learning_rate * g;
        }
        Ok(())
    }

    fn learning_rate(&self) -> f64 {
        self.learning_rate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Adam(AdamConfig),
    Sgd { learning_rate: f64 },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam(AdamConfig::default())
    }
}

impl OptimizerConfig {
    pub fn build(&self, n_params: usize) -> Box<dyn Optimizer> {
        match *self {
            OptimizerConfig::Adam(config) => Box::new(AdamState::new(config, n_params)),
            OptimizerConfig::Sgd { learning_rate } => Box::new(Sgd { learning_rate }),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        match self {
            OptimizerConfig::Adam(c) => c.learning_rate,
            OptimizerConfig::Sgd { learning_rate } => *learning_rate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonConfig {
    pub max_iterations: usize,
    /// Convergence threshold on the gradient max-norm.
    pub tolerance: f64,
    pub max_step_halvings: usize,
    /// Ridge strength `λ`, adding `λ‖β‖²/2` to the loss.
    pub penalizer: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            tolerance: 1e-7,
            max_step_halvings: 40,
            penalizer: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonFit {
    pub model: LinearRiskModel,
    pub iterations: usize,
    pub gradient_norm: f64,
    /// Loss at every accepted iterate, starting from `β = 0`.
    pub losses: Vec<f64>,
}

const MIN_JITTER: f64 = 1e-9;
const MAX_JITTER: f64 = 1e-3;
const MAX_CONDITION: f64 = 1e14;
const LOSS_SLACK: f64 = 1e-12;

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Solves `H d = g` by Cholesky, adding ridge jitter `1e-9·I` (growing ×10
/// up to `1e-3`) when `H` is singular or badly conditioned.
fn newton_direction(hessian: Vec<f64>, gradient: &[f64]) -> Result<Vec<f64>> {
    let p = gradient.len();
    let h = DMatrix::from_row_slice(p, p, &hessian);
    let g = DVector::from_column_slice(gradient);
    let mut jitter = 0.0;
    loop {
        let mut m = h.clone();
        for i in 0..p {
            m[(i, i)] += jitter;
        }
        if let Some(chol) = m.cholesky() {
            let diag = chol.l_dirty().diagonal();
            let (lo, hi) = diag
                .iter()
                .fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(d.abs()), hi.max(d.abs())));
            let condition = (hi / lo).powi(2);
            if lo > 0.0 && condition.is_finite() && condition <= MAX_CONDITION {
                return Ok(chol.solve(&g).iter().copied().collect());
            }
        }
        jitter = if jitter == 0.0 { MIN_JITTER } else { jitter * 10.0 };
        if jitter > MAX_JITTER * (1.0 + 1e-9) {
            return Err(Error::SingularHessian { jitter: MAX_JITTER });
        }
    }
}

fn penalized_derivatives(data: &Dataset, beta: &[f64], penalizer: f64) -> Result<CoxDerivatives> {
    let mut d = cox_derivatives(data, &LinearRiskModel::new(beta.to_vec()))?;
    if penalizer > 0.0 {
        let p = beta.len();
        d.loss += 0.5 * penalizer * beta.iter().map(|b| b * b).sum::<f64>();
        for (g, b) in d.gradient.iter_mut().zip(beta) {
            *g += penalizer * b;
        }
        if let Some(h) = d.hessian.as_mut() {
            for i in 0..p {
                h[i * p + i] += penalizer;
            }
        }
    }
    Ok(d)
}

fn penalized_loss(data: &Dataset, beta: &[f64], penalizer: f64) -> Result<f64> {
    let loss = cox_negative_log_likelihood(data, &LinearRiskModel::new(beta.to_vec()))?;
    Ok(loss + 0.5 * penalizer * beta.iter().map(|b| b * b).sum::<f64>())
}

/// Newton–Raphson on the (optionally ridge-penalized) negative partial
/// log-likelihood, started at `β = 0`, with step halving whenever the loss
/// would increase.
pub fn newton_fit_cox(data: &Dataset, config: &NewtonConfig) -> Result<NewtonFit> {
    if !(config.tolerance > 0.0) {
        return Err(Error::InvalidValue("newton tolerance must be positive".to_string()));
    }
    if !(config.penalizer >= 0.0 && config.penalizer.is_finite()) {
        return Err(Error::InvalidValue("newton penalizer must be non-negative".to_string()));
    }
    let lambda = config.penalizer;
    let mut beta = vec![0.0; data.dim()];
    let mut current = penalized_derivatives(data, &beta, lambda)?;
    let mut losses = vec![current.loss];
    for iteration in 0..=config.max_iterations {
        let gradient_norm = max_norm(&current.gradient);
        if gradient_norm < config.tolerance {
            return Ok(NewtonFit {
                model: LinearRiskModel::new(beta),
                iterations: iteration,
                gradient_norm,
                losses,
            });
        }
        if iteration == config.max_iterations {
            return Err(Error::NotConverged {
                iterations: iteration,
                gradient_norm,
            });
        }
        let hessian = current.hessian.take().expect("requested");
        let mut direction = newton_direction(hessian, &current.gradient)?;
        let mut accepted = None;
        for _ in 0..=config.max_step_halvings {
            let candidate: Vec<f64> = beta.iter().zip(&direction).map(|(b, d)| b - d).collect();
            let loss = penalized_loss(data, &candidate, lambda)?;
            let slack = LOSS_SLACK * current.loss.abs().max(1.0);
            if loss <= current.loss || loss <= current.loss + slack {
                let next = penalized_derivatives(data, &candidate, lambda)?;
                // within rounding of the previous loss, require actual progress on the gradient
                if loss <= current.loss || max_norm(&next.gradient) < gradient_norm {
                    accepted = Some((candidate, next));
                    break;
                }
            }
            direction.iter_mut().for_each(|d| *d *= 0.5);
        }
        match accepted {
            Some((candidate, next)) => {
                beta = candidate;
                losses.push(next.loss);
                current = next;
            }
            None => {
                return Err(Error::NotConverged {
                    iterations: iteration,
                    gradient_norm,
                })
            }
        }
    }
    unreachable!("loop returns on its final iteration")
}
