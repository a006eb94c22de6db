//! Error type shared across the crate.

use std::fmt;
use std::io;

/// Errors produced by library operations.
#[derive(Debug)]
pub enum Error {
    /// An input violated a documented precondition.
    InvalidArgument(String),
    /// An internal contract was broken by the caller (e.g. empty layer set).
    ContractViolation(String),
    /// A numeric computation produced a non-finite value.
    Numeric(String),
    /// Training diverged: a loss became non-finite at the given coordinates.
    Divergence {
        epoch: usize,
        batch: Option<usize>,
        value: f64,
    },
    /// A data file failed to parse at the given 1-based line.
    Parse { line: usize, message: String },
    /// A checkpoint file is malformed or truncated.
    CorruptCheckpoint(String),
    /// An I/O error.
    Io(io::Error),
    /// A pipeline stage failed; wraps the underlying error.
    Stage {
        stage: &'static str,
        source: Box<Error>,
    },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::ContractViolation(msg) => write!(f, "contract violation: {msg}"),
            Error::Numeric(msg) => write!(f, "numeric error: {msg}"),
            Error::Divergence {
                epoch,
                batch,
                value,
            } => match batch {
                Some(b) => write!(
                    f,
                    "training diverged at epoch {epoch}, batch {b}: loss = {value}"
                ),
                None => write!(f, "training diverged at epoch {epoch}: loss = {value}"),
            },
            Error::Parse { line, message } => write!(f, "parse error at line {line}: {message}"),
            Error::CorruptCheckpoint(msg) => write!(f, "corrupt checkpoint: {msg}"),
            Error::Io(e) => write!(f, "i/o error: {e}"),
            Error::Stage { stage, source } => write!(f, "stage '{stage}' failed: {source}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            Error::Stage { source, .. } => Some(source.as_ref()),
            _ => None,
        }
    }
}

impl From<io::Error> for Error {
    fn from(e: io::Error) -> Self {
        Error::Io(e)
    }
}

impl Error {
    /// Wrap an error with the name of the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
