use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("no epochs fit in the series span")]
    EmptyResult,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("no feature passed selection; per-feature SWSI pass rates: {report}")]
    SelectionEmpty { report: String },

    #[error("degenerate clustering: {0}")]
    DegenerateClustering(String),

    #[error("reference sample too small for quartiles ({0} points, need at least 4)")]
    InsufficientReference(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("ambiguous state mapping: {0}")]
    AmbiguousMapping(String),

    #[error("class starvation: {0}")]
    ClassStarvation(String),

    #[error("single-class outcome: {0}")]
    SingleClass(String),

    #[error("unknown method `{0}` (expected one of: hmm, dhmm, proposed)")]
    UnknownMethod(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors caused by bad input or configuration, as opposed to failures
    /// while running. The CLI maps these to exit code 2.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Validation(_)
                | Error::Config(_)
                | Error::UnknownMethod(_)
                | Error::Json(_)
                | Error::DimensionMismatch { .. }
        )
    }
}
