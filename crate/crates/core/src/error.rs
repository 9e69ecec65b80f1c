use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by loading, kernel construction, estimation and testing.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: row {row}: {message}")]
    Csv {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("{path}: row {row} has {found} fields, expected {expected}")]
    RaggedRow {
        path: PathBuf,
        row: usize,
        found: usize,
        expected: usize,
    },

    #[error("{path}: row {row}, column {column}: cannot parse {cell:?} as a number")]
    NonNumeric {
        path: PathBuf,
        row: usize,
        column: usize,
        cell: String,
    },

    #[error("{path}: row {row}, column {column}: non-finite value {cell:?}")]
    NonFinite {
        path: PathBuf,
        row: usize,
        column: usize,
        cell: String,
    },

    #[error("{path}: empty selection ({reason})")]
    EmptySelection { path: PathBuf, reason: String },

    #[error("invalid sample: {0}")]
    InvalidSample(String),

    #[error("sample sizes {} differ", join_counts(.0))]
    SampleSizeMismatch(Vec<usize>),

    #[error("need at least {needed} observations, got {got}")]
    TooFewObservations { needed: usize, got: usize },

    #[error("degenerate sample: zero median distance")]
    DegenerateSample,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("gram matrix must have a zero diagonal")]
    NotZeroDiagonal,

    #[error("gram matrix diagonal is already zeroed")]
    AlreadyZeroDiagonal,

    #[error("covariance matrix is not positive semidefinite")]
    NotPositiveSemidefinite,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

fn join_counts(counts: &[usize]) -> String {
    counts
        .iter()
        .map(|c| c.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl Error {
    /// True for failures of a statistical precondition (sample too small,
    /// degenerate kernel, non-PSD covariance), as opposed to input or usage
    /// problems.
    pub fn is_statistical(&self) -> bool {
        matches!(
            self,
            Error::TooFewObservations { .. }
                | Error::DegenerateSample
                | Error::NotPositiveSemidefinite
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
