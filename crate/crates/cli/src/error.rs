use kfed::KfedError;
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),

    #[error("{0}")]
    Runtime(String),

    #[error("{path}: {message}")]
    Io { path: String, message: String },

    #[error("state file {path}: checksum mismatch (expected {expected}, found {found})")]
    Checksum {
        path: String,
        expected: String,
        found: String,
    },

    #[error("{failed} of {total} seeds failed")]
    SeedsFailed { failed: usize, total: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) | CliError::Checksum { .. } => EXIT_VALIDATION,
            CliError::Runtime(_) | CliError::SeedsFailed { .. } => EXIT_RUNTIME,
            CliError::Io { .. } => EXIT_IO,
        }
    }

    pub fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}

impl From<KfedError> for CliError {
    fn from(e: KfedError) -> Self {
        match e {
            KfedError::Io { path, source } => CliError::Io {
                path,
                message: source.to_string(),
            },
            KfedError::InsufficientDistinct { .. }
            | KfedError::TooFewCenters { .. }
            | KfedError::NoAggregationState => CliError::Runtime(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
