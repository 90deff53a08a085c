use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("user {user}, fold {fold}: {source}")]
    Training {
        user: String,
        fold: usize,
        #[source]
        source: handstate_models::ModelError,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error(transparent)]
    Core(#[from] handstate_core::Error),

    #[error(transparent)]
    Model(#[from] handstate_models::ModelError),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;
