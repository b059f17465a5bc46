use thiserror::Error;

#[derive(Debug, Error)]
pub enum KfedError {
    #[error("empty matrix")]
    EmptyMatrix,

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("insufficient distinct points: need {needed}, found {found}")]
    InsufficientDistinct { needed: usize, found: usize },

    #[error("empty cluster in target: cluster {0}")]
    EmptyCluster(usize),

    #[error("network has fewer than k device centers ({available} < {k})")]
    TooFewCenters { available: usize, k: usize },

    #[error("no aggregation state")]
    NoAggregationState,

    #[error("too few samples: n = {n} < k = {k}")]
    TooFewSamples { n: usize, k: usize },

    #[error("invalid partition: {0}")]
    Partition(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, KfedError>;

impl KfedError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        KfedError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
