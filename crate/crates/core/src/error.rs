//! Crate-wide error type.
//!
//! Errors are grouped into three failure classes so that callers (the CLI in
//! particular) can map them onto distinct exit codes: configuration problems,
//! data problems (missing or malformed files), and numeric failures.

use thiserror::Error;

/// Coarse failure class, used by the CLI for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::Data(_) | Error::Parse { .. } | Error::Io { .. } => ErrorKind::Data,
            Error::Numeric(_) | Error::ShapeMismatch { .. } => ErrorKind::Numeric,
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
