use std::io;

/// Result alias used throughout the crate.
pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by front-ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("bad magic at offset 0: expected \"EMB1\", found {found:?}")]
    BadMagic { found: [u8; 4] },

    #[error("truncated input at offset {offset}: needed {needed} more bytes")]
    Truncated { offset: usize, needed: usize },

    #[error("size mismatch at offset {offset}: header declares {expected} values, payload holds {actual}")]
    SizeMismatch {
        offset: usize,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value at byte offset {offset}")]
    NonFiniteValue { offset: usize },

    #[error("invalid header at offset {offset}: {message}")]
    Header { offset: usize, message: String },

    #[error("invalid embedding set: {0}")]
    InvalidSet(String),

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("invalid label file: {0}")]
    Labels(String),

    #[error("unknown label for item {0:?}")]
    UnknownLabel(String),

    #[error("invalid prompt template: {0}")]
    Template(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("degenerate direction: norm {norm:e} is below the degeneracy threshold")]
    DegenerateDirection { norm: f64 },

    #[error("degenerate projection for row {row}")]
    DegenerateRow { row: String },

    #[error("non-finite gradient entry at index {index}")]
    NonFiniteGradient { index: usize },

    #[error("non-finite loss: training diverged")]
    NonFiniteLoss,

    #[error("training diverged after {} iterations", trace.len())]
    Diverged { trace: Vec<(usize, f64)> },

    #[error("PCA needs target dimension {target_dim} to be smaller than the {count} input rows")]
    PcaNotApplicable { target_dim: usize, count: usize },

    #[error("data has rank {attainable}, below the requested {requested} components")]
    RankDeficient { attainable: usize, requested: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no query has a same-class neighbor; ranking metrics are undefined")]
    NoEvaluableQueries,

    #[error("seed {seed} failed: {source}")]
    Seed {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) | Error::PcaNotApplicable { .. } => ErrorCategory::Config,
            Error::DegenerateDirection { .. }
            | Error::DegenerateRow { .. }
            | Error::NonFiniteGradient { .. }
            | Error::NonFiniteLoss
            | Error::Diverged { .. }
            | Error::RankDeficient { .. } => ErrorCategory::Numerical,
            Error::Seed { source, .. } => source.category(),
            _ => ErrorCategory::Data,
        }
    }
}
