//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or parameter shapes do not line up. Names both shapes.
    #[error("shape mismatch in {op}: {details}")]
    Shape { op: &'static str, details: String },

    /// A documented precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("vocabulary index {id} out of range (vocab size {size})")]
    VocabIndex { id: u32, size: usize },

    #[error("unknown question id {0:?}")]
    UnknownId(String),

    #[error("duplicate question id {0:?}")]
    DuplicateId(String),

    #[error("non-finite gradient in parameter {0:?}")]
    NonFiniteGradient(String),

    /// Malformed line in a text input file.
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    /// Malformed binary file or incompatible header.
    #[error("{path}: {msg}")]
    Format { path: String, msg: String },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn shape(op: &'static str, details: impl Into<String>) -> Self {
        Error::Shape {
            op,
            details: details.into(),
        }
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
