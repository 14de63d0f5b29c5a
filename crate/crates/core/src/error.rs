use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, MrisError>;

/// Failure modes shared by every module of the engine.
#[derive(Debug, Error)]
pub enum MrisError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("constraint violation: {0}")]
    Constraint(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("duplicate record id {0}")]
    DuplicateId(String),
    #[error("missing record id {0}")]
    MissingId(String),
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl MrisError {
    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        MrisError::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MrisError::Io {
            path: path.into(),
            source,
        }
    }

    /// Broad failure class, used by the CLI to pick an exit status.
    pub fn class(&self) -> ErrorClass {
        match self {
            MrisError::Config(_) => ErrorClass::Config,
            MrisError::NonFinite(_) | MrisError::Degenerate(_) => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

pub(crate) fn ensure_finite<'a, I>(values: I, context: &'static str) -> Result<()>
where
    I: IntoIterator<Item = &'a f64>,
{
    if values.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(MrisError::NonFinite(context))
    }
}

pub(crate) fn ensure_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(MrisError::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}
