//! Federated survival analysis.
//!
//! Continuous-time Cox models, the discrete-time model fitted through
//! stacking, a deterministic simulator of federated minibatch training,
//! the WebDISCO summary protocol, synthetic data and cross-validation.

pub mod cli;
pub mod datagen;
pub mod error;
pub mod evaluation;
pub mod federated;
pub mod io;
pub mod optim;
pub mod schemes;
pub mod stacking;
pub mod survival;
pub mod webdisco;

pub use error::{Error, ErrorClass, Result};
pub use survival::{Dataset, DiscreteTimeModel, Individual, LinearRiskModel, TimeGrid};
