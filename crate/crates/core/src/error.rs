//! Error type shared across the library.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Configuration or input validation problems (usage errors).
    #[error("config error: {0}")]
    Config(String),

    /// CSV parsing problems, with the 1-based line that caused them.
    #[error("csv error at line {line}: {message}")]
    Csv { line: usize, message: String },

    /// Incompatible matrix or vector shapes.
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: String,
        actual: String,
    },

    /// A loss or intermediate value left the finite range.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Checkpoint file corruption or shape disagreement.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Usage errors exit with code 1; runtime failures with code 2.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Csv { .. })
    }

    pub fn shape(context: impl Into<String>, expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.into(),
            actual: actual.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
