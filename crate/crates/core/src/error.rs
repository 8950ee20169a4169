// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error type shared by every steerkit module.

use std::path::PathBuf;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong inside the toolkit.
///
/// The variants mirror the failure classes the CLI maps onto exit codes, so
/// callers can match on [`Error::kind`] without string inspection.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// The input is well-formed but carries no usable signal (too few rows,
    /// zero variance, a direction annihilated by a projection, ...).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// The caller violated a precondition (shape mismatch, asymmetric matrix,
    /// unknown layer id, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// An iterative kernel failed to converge or produced values outside the
    /// tolerated envelope.
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// Persisted data or a configuration does not satisfy its declared
    /// invariants.
    #[error("validation error: {0}")]
    Validation(String),

    /// Checksum mismatch on a persisted artifact.
    #[error("corrupt data: {0}")]
    CorruptData(String),

    /// Filesystem failure, tagged with the offending path.
    #[error("i/o error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Synthetic corpus generation could not satisfy its quotas.
    #[error("generation budget exceeded: {0}")]
    GenerationBudgetExceeded(String),
}

/// Coarse classification of [`Error`] values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    DegenerateInput,
    InvalidInput,
    NumericalFailure,
    Validation,
    CorruptData,
    Io,
    GenerationBudgetExceeded,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::DegenerateInput(_) => ErrorKind::DegenerateInput,
            Error::InvalidInput(_) => ErrorKind::InvalidInput,
            Error::NumericalFailure(_) => ErrorKind::NumericalFailure,
            Error::Validation(_) => ErrorKind::Validation,
            Error::CorruptData(_) => ErrorKind::CorruptData,
            Error::Io { .. } => ErrorKind::Io,
            Error::GenerationBudgetExceeded(_) => ErrorKind::GenerationBudgetExceeded,
        }
    }

    /// Prefix the message with the pipeline stage that produced it.
    pub fn in_stage(self, stage: &str) -> Self {
        let tag = |m: String| format!("[{stage}] {m}");
        match self {
            Error::DegenerateInput(m) => Error::DegenerateInput(tag(m)),
            Error::InvalidInput(m) => Error::InvalidInput(tag(m)),
            Error::NumericalFailure(m) => Error::NumericalFailure(tag(m)),
            Error::Validation(m) => Error::Validation(tag(m)),
            Error::CorruptData(m) => Error::CorruptData(tag(m)),
            Error::GenerationBudgetExceeded(m) => Error::GenerationBudgetExceeded(tag(m)),
            io @ Error::Io { .. } => io,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
