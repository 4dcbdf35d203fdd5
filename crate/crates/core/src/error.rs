use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure modes of the checkpoint reader.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointFault {
    BadMagic,
    VersionMismatch { found: u32, expected: u32 },
    Truncated,
    ChecksumMismatch,
    Malformed,
}

impl std::fmt::Display for CheckpointFault {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CheckpointFault::BadMagic => write!(f, "not a checkpoint file (bad magic bytes)"),
            CheckpointFault::VersionMismatch { found, expected } => {
                write!(f, "format version {found} is not supported (expected {expected})")
            }
            CheckpointFault::Truncated => write!(f, "file is truncated"),
            CheckpointFault::ChecksumMismatch => write!(f, "checksum mismatch, file is corrupt"),
            CheckpointFault::Malformed => write!(f, "payload is malformed"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("SMILES parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("data error: {0}")]
    Data(String),
    #[error("{path}:{line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("state error: {0}")]
    State(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(CheckpointFault),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
