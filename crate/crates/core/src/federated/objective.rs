use crate::error::{Error, Result};
use crate::stacking::{bce_accumulate, StackedDataset};
use crate::survival::{cox_batch_loss_and_gradient, Dataset, DiscreteTimeModel};

/// Loss held by one center, evaluated on batches of its own item indices.
pub trait LocalObjective: Send + Sync {
    fn n_params(&self) -> usize;
    fn n_items(&self) -> usize;
    /// Loss and gradient summed over `batch` (local item indices).
    fn loss_and_gradient(&self, params: &[f64], batch: &[usize]) -> Result<(f64, Vec<f64>)>;
    /// Loss over every local item.
    fn total_loss(&self, params: &[f64]) -> Result<f64>;
}

/// Weighted BCE over a center's stacked samples.
#[derive(Debug, Clone)]
pub struct StackedBceObjective {
    base: Dataset,
    stacked: StackedDataset,
    template: DiscreteTimeModel,
    pos_weight: f64,
}

impl StackedBceObjective {
    pub fn new(base: Dataset, stacked: StackedDataset, template: DiscreteTimeModel, pos_weight: f64) -> Result<Self> {
        if template.grid_len() != stacked.grid.len() {
            return Err(Error::DimensionMismatch {
                expected: stacked.grid.len(),
                found: template.grid_len(),
            });
        }
        if template.risk_fn.input_dim() != base.dim() {
            return Err(Error::DimensionMismatch {
                expected: base.dim(),
                found: template.risk_fn.input_dim(),
            });
        }
        Ok(Self {
            base,
            stacked,
            template,
            pos_weight,
        })
    }

    pub fn stacked(&self) -> &StackedDataset {
        &self.stacked
    }

    fn model(&self, params: &[f64]) -> Result<DiscreteTimeModel> {
        let mut model = self.template.clone();
        model.set_flat(params)?;
        Ok(model)
    }
}

impl LocalObjective for StackedBceObjective {
    fn n_params(&self) -> usize {
        self.template.n_params()
    }

    fn n_items(&self) -> usize {
        self.stacked.len()
    }

    fn loss_and_gradient(&self, params: &[f64], batch: &[usize]) -> Result<(f64, Vec<f64>)> {
        let model = self.model(params)?;
        Ok(bce_accumulate(
            &model,
            batch.iter().map(|&i| &self.stacked.samples[i]),
            &self.base,
            self.pos_weight,
        ))
    }

    fn total_loss(&self, params: &[f64]) -> Result<f64> {
        let model = self.model(params)?;
        Ok(bce_accumulate(&model, self.stacked.samples.iter(), &self.base, self.pos_weight).0)
    }
}

/// Cox loss whose risk sets are built from the batch alone.
#[derive(Debug, Clone)]
pub struct CoxBatchObjective {
    data: Dataset,
}

impl CoxBatchObjective {
    pub fn new(data: Dataset) -> Self {
        Self { data }
    }
}

impl LocalObjective for CoxBatchObjective {
    fn n_params(&self) -> usize {
        self.data.dim()
    }

    fn n_items(&self) -> usize {
        self.data.len()
    }

    fn loss_and_gradient(&self, params: &[f64], batch: &[usize]) -> Result<(f64, Vec<f64>)> {
        cox_batch_loss_and_gradient(&self.data, batch, params)
    }

    fn total_loss(&self, params: &[f64]) -> Result<f64> {
        let all: Vec<usize> = (0..self.data.len()).collect();
        Ok(cox_batch_loss_and_gradient(&self.data, &all, params)?.0)
    }
}
