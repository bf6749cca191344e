use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the crate.
///
/// `Contract` covers every violated precondition (shape disagreements,
/// out-of-range arguments, inconsistent configs); `Io` and `Format` cover
/// files on disk.
#[derive(Debug, Error)]
pub enum DmnError {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),
}

impl DmnError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DmnError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        DmnError::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Process exit code: 1 for contract violations, 2 for I/O and file format problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            DmnError::Contract(_) | DmnError::NonFinite(_) => 1,
            DmnError::Io { .. } | DmnError::Format { .. } => 2,
        }
    }
}

pub type Result<T, E = DmnError> = std::result::Result<T, E>;

macro_rules! contract {
    ($($arg:tt)*) => {
        $crate::error::DmnError::Contract(format!($($arg)*))
    };
}

macro_rules! ensure {
    ($cond:expr, $($arg:tt)*) => {
        if !$cond {
            return Err($crate::error::DmnError::Contract(format!($($arg)*)));
        }
    };
}

pub(crate) use contract;
pub(crate) use ensure;
