use std::io;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid bounds: {0}")]
    Bounds(String),

    #[error("oracle protocol violation: {0}")]
    Protocol(String),

    #[error("non-finite value in {0}")]
    Numeric(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss} (lr = {learning_rate})")]
    Divergence {
        epoch: usize,
        batch: usize,
        loss: f64,
        learning_rate: f64,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("truncated input: {0}")]
    Length(String),

    #[error("degenerate normalization statistics: {0}")]
    DegenerateStats(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
