use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, GicError>;

/// Every failure the library can surface.
///
/// Variants fall into three classes (configuration, data, numeric) which the
/// CLI maps onto exit codes 1, 2 and 3 respectively.
#[derive(Debug, Error)]
pub enum GicError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),
}

/// Coarse error class, used for CLI exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 1,
            ErrorClass::Data => 2,
            ErrorClass::Numeric => 3,
        }
    }
}

impl GicError {
    pub fn class(&self) -> ErrorClass {
        match self {
            GicError::Config(_) | GicError::Shape(_) => ErrorClass::Config,
            GicError::Io { .. } | GicError::Parse { .. } | GicError::Data(_) => ErrorClass::Data,
            GicError::NonFinite(_) => ErrorClass::Numeric,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GicError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        GicError::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
