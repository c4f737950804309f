use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {field}: {reason}")]
    Validation { field: String, reason: String },

    #[error("degenerate regressor: sample variance of x is {variance:e}")]
    DegenerateRegressor { variance: f64 },

    #[error("insufficient data: need at least {needed} observations, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("degenerate variance: total variance of x is {variance:e}")]
    DegenerateVariance { variance: f64 },

    #[error("collinear design: dependent columns {columns:?}")]
    Collinear { columns: Vec<String> },

    #[error("unit id mismatch: {} ids present on one side only, first few: {:?}", missing.len(), &missing[..missing.len().min(10)])]
    IdMismatch { missing: Vec<u64> },

    #[error("degenerate labels: training split contains only class {class}")]
    DegenerateLabels { class: u8 },

    #[error("AUC undefined: scores contain {positives} positives and {negatives} negatives")]
    UndefinedAuc { positives: usize, negatives: usize },

    #[error("degenerate assignment: {treated} of {n} units treated; change the seed or the number of units")]
    DegenerateAssignment { treated: usize, n: usize },

    #[error("insufficient strata: {usable} strata have both arms, need at least 2")]
    InsufficientStrata { usable: usize },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: u64, message: String },

    #[error("{}: schema mismatch: {message}", path.display())]
    Schema { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Stable machine-readable tag for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Validation { .. } => "validation",
            Error::DegenerateRegressor { .. } => "degenerate_regressor",
            Error::InsufficientData { .. } => "insufficient_data",
            Error::DegenerateVariance { .. } => "degenerate_variance",
            Error::Collinear { .. } => "collinear",
            Error::IdMismatch { .. } => "id_mismatch",
            Error::DegenerateLabels { .. } => "degenerate_labels",
            Error::UndefinedAuc { .. } => "undefined_auc",
            Error::DegenerateAssignment { .. } => "degenerate_assignment",
            Error::InsufficientStrata { .. } => "insufficient_strata",
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Schema { .. } => "schema",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
