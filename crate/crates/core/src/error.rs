use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("histogram intersection kernel requires nonnegative inputs (found {value})")]
    NegativeEntry { value: f64 },

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("invalid neighbor count k={k} for {n} points")]
    InvalidNeighborCount { k: usize, n: usize },

    #[error("degenerate graph: vertex {vertex} has zero degree")]
    DegenerateGraph { vertex: usize },

    #[error("empty domain at position {0}")]
    EmptyDomain(usize),

    #[error("dictionary atom {atom} is not unit-norm (norm {norm})")]
    DictionaryNotNormalized { atom: usize, norm: f64 },

    #[error("sparsity {t0} out of range [1, {max}]")]
    SparsityOutOfRange { t0: usize, max: usize },

    #[error("sparse coding failed for column {column}: {source}")]
    Column {
        column: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("missing class labels: {0}")]
    MissingLabels(String),

    #[error("kernel Gram factorization failed even with jitter {jitter:e}")]
    GramDeficient { jitter: f64 },

    #[error("infeasible starting point: constraint residual {residual:e}")]
    Infeasible { residual: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),

    #[error("label sets disagree between domains: {0}")]
    LabelMismatch(String),

    #[error("class {class} is empty in domain {domain}")]
    EmptyClass { class: usize, domain: String },

    #[error("unknown domain {0}")]
    UnknownDomain(usize),

    #[error("negative residual {value:e} for class {class}; projection is not feasible")]
    NegativeResidual { class: usize, value: f64 },

    #[error("empty test set")]
    EmptyTestSet,

    #[error("malformed data in {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error("zero column {0} cannot be L1-normalized")]
    ZeroColumn(usize),

    #[error("class {class} has {available} samples, {requested} requested")]
    ClassTooSmall {
        class: usize,
        available: usize,
        requested: usize,
    },

    #[error("unsupported model container (magic {found:?})")]
    Version { found: String },

    #[error("truncated file: {0}")]
    Truncated(PathBuf),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid synthetic benchmark parameters: {0}")]
    InvalidSynth(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Truncated(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Malformed {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
