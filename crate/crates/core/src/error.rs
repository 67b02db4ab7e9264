use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: byte offset {offset}: {message}")]
    Idx {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("{path}: row {row}: {message}")]
    Csv {
        path: PathBuf,
        row: u64,
        message: String,
    },

    #[error("empty dataset requested")]
    EmptyDataset,

    #[error("label out of range: sample {index} has label {label}, class count is {classes}")]
    LabelOutOfRange {
        index: usize,
        label: i64,
        classes: usize,
    },

    #[error("sample {0} has zero norm and cannot be normalized")]
    ZeroNorm(usize),

    #[error("non-finite feature value at sample {sample}, dimension {dim}")]
    NonFinite { sample: usize, dim: usize },

    #[error("dimension mismatch: expected {expected}, got {actual} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("assumption A1 violated: code length {0} is not a power of 2")]
    NotPowerOfTwo(usize),

    #[error("assumption A2 violated: {classes} classes do not fit in {bits} bits (need L >= C)")]
    TooManyClasses { classes: usize, bits: usize },

    #[error("{what} {requested} exceeds the limit of {limit}")]
    BudgetExceeded {
        what: &'static str,
        requested: usize,
        limit: usize,
    },

    #[error("linear system is singular or not positive definite ({0})")]
    Singular(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
