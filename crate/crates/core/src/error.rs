use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised anywhere in the posterior engine, its storage tiers, and the
/// training / benchmark pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("posterior is empty: no iterates have been accepted")]
    EmptyPosterior,

    #[error("value out of range: {0}")]
    Range(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt stream: {0}")]
    Corrupt(String),

    #[error("array `{0}` already exists")]
    DuplicateArray(String),

    #[error("array `{0}` does not exist on this backend")]
    UnknownArray(String),

    #[error("index out of bounds: {0}")]
    OutOfBounds(String),

    #[error("insufficient capacity: need {needed} bytes, {available} available")]
    InsufficientCapacity { needed: u64, available: u64 },

    #[error("storage I/O failure at {}: {source}", path.display())]
    Storage {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: u64, loss: f64 },

    #[error("no `{0}` baseline present; cannot compute runtime ratios")]
    MissingBaseline(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn storage(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Storage {
            path: path.into(),
            source,
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping any context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code: 1 usage, 2 data/format, 3 storage, 4 divergence.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Config(_) => 1,
            Error::Dimension { .. }
            | Error::Data(_)
            | Error::EmptyPosterior
            | Error::Range(_)
            | Error::Format(_)
            | Error::Corrupt(_)
            | Error::MissingBaseline(_) => 2,
            Error::DuplicateArray(_)
            | Error::UnknownArray(_)
            | Error::OutOfBounds(_)
            | Error::InsufficientCapacity { .. }
            | Error::Storage { .. }
            | Error::Io(_) => 3,
            Error::Divergence { .. } => 4,
            Error::Context { .. } => unreachable!("root() strips context"),
        }
    }
}

pub(crate) fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension { expected, actual })
    }
}
