use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the engine. The CLI maps these onto exit codes via
/// [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("dense file format error: {0}")]
    DenseFormat(String),

    #[error("model file format error: {0}")]
    ModelFormat(String),

    #[error("provider mismatch: {0}")]
    ProviderMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("report fingerprint mismatch: {0} vs {1}")]
    FingerprintMismatch(String, String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for this error: 1 for bad invocations, 2 for data
    /// and format problems, 3 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Numeric(_) | Error::Shape(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
