use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset has no observed events; the partial likelihood is undefined")]
    NoEvents,
    #[error("non-finite value encountered in {0}")]
    Numeric(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("grid index {index} out of range for a grid of length {len}")]
    GridIndexOutOfRange { index: usize, len: usize },
    #[error("individual {individual} has time {time} which is not on the time grid")]
    OffGrid { individual: usize, time: f64 },
    #[error("stacked dataset has no positive samples; weighted loss is undefined")]
    NoPositiveSamples,
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("fixed point for the optimal bias did not converge after {iterations} iterations")]
    FixedPointDivergence { iterations: usize },
    #[error("hessian is singular or ill-conditioned even with ridge jitter {jitter:e}; consider adding a ridge penalty or removing constant covariates")]
    SingularHessian { jitter: f64 },
    #[error("newton solver did not converge after {iterations} iterations (gradient max-norm {gradient_norm:e})")]
    NotConverged { iterations: usize, gradient_norm: f64 },
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("center {center} has no events")]
    EventFreeCenter { center: usize },
    #[error("center {center} was asked to read item {index}, which it does not hold")]
    ForeignIndex { center: usize, index: usize },
    #[error("inconsistent summaries at grid index {index}: events present but zero risk-set mass")]
    InconsistentSummary { index: usize },
    #[error("no comparable pairs; the concordance index is undefined")]
    NoComparablePairs,
    #[error("invalid cross-validation plan: {0}")]
    InvalidPlan(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("row {row}: {message}")]
    Csv { row: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Failure class, used by the command-line front end to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
    Other,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::InvalidPlan(_) => ErrorClass::Config,
            Error::Csv { .. }
            | Error::OffGrid { .. }
            | Error::EmptyInput(_)
            | Error::InvalidValue(_)
            | Error::InvalidPartition(_)
            | Error::EventFreeCenter { .. }
            | Error::DimensionMismatch { .. }
            | Error::NoEvents
            | Error::NoPositiveSamples
            | Error::NoComparablePairs => ErrorClass::Data,
            Error::Numeric(_)
            | Error::FixedPointDivergence { .. }
            | Error::SingularHessian { .. }
            | Error::NotConverged { .. }
            | Error::InconsistentSummary { .. } => ErrorClass::Numeric,
            Error::GridIndexOutOfRange { .. } | Error::ForeignIndex { .. } | Error::Io { .. } => {
                ErrorClass::Other
            }
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
