use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used to pick a process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Io,
    Parameter,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Validation => 2,
            ErrorKind::Io => 3,
            ErrorKind::Parameter => 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },

    #[error("{source_name}:{line}:{column}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{source_name}:{line}: expected {expected} fields, found {found}")]
    RaggedRow {
        source_name: String,
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("{source_name}: duplicate {what} identifier '{id}'")]
    DuplicateId {
        source_name: String,
        what: &'static str,
        id: String,
    },

    #[error("{source_name}:{line}: unknown role '{token}' (expected control or treated)")]
    UnknownRole {
        source_name: String,
        line: usize,
        token: String,
    },

    #[error("treated sample '{sample}' has no control_id")]
    MissingControl { sample: String },

    #[error("treated sample '{sample}' references unknown control '{control}'")]
    DanglingControl { sample: String, control: String },

    #[error("compound '{compound}' replicate {replicate} appears more than once")]
    DuplicateReplicate { compound: String, replicate: u32 },

    #[error("sample '{sample}' has no positive value to replace zeros with")]
    AllZeroColumn { sample: String },

    #[error("sample identifiers disagree between matrix and metadata: {detail}")]
    SampleMismatch { detail: String },

    #[error("vector length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid data: {0}")]
    Validation(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("instance too large: C({features}, {n}) exceeds the enumeration limit of {limit}")]
    InstanceTooLarge { features: usize, n: usize, limit: u64 },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } | Error::Json(_) => ErrorKind::Io,
            Error::Parameter(_) | Error::InstanceTooLarge { .. } | Error::LengthMismatch { .. } => {
                ErrorKind::Parameter
            }
            _ => ErrorKind::Validation,
        }
    }
}
