use thiserror::Error;

use crate::certify::lmi::LmiError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("simulation diverged: first non-finite state at sample {index}")]
    Divergence { index: usize },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("no unique equilibrium: {0}")]
    NoUniqueEquilibrium(String),

    #[error("informativity error ({context}): achieved rank {achieved}, required {required}")]
    Informativity {
        context: String,
        achieved: usize,
        required: usize,
    },

    #[error("reduction error: {0}")]
    Reduction(String),

    #[error(transparent)]
    Lmi(#[from] LmiError),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
