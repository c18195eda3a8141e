use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("record {index}: icount {icount} is lower than previous icount {prev}")]
    IcountRegression {
        index: usize,
        icount: u64,
        prev: u64,
    },

    #[error("truncated binary trace at byte offset {offset}")]
    Truncated { offset: usize },

    #[error("invalid binary trace record at byte offset {offset}: {msg}")]
    BadRecord { offset: usize, msg: String },

    #[error("validation: {0}")]
    Validation(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("integrity: {0}")]
    Integrity(String),

    #[error("sweep run {tuple} failed: {source}")]
    Sweep {
        tuple: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for this error: 1 validation, 2 I/O, 3 internal invariant.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 2,
            Error::Integrity(_) => 3,
            Error::Sweep { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}
