use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("training diverged at epoch {epoch}: {message}")]
    Diverged { epoch: usize, message: String },

    #[error("solver did not converge after {iterations} iterations (KKT gap {gap:.3e})")]
    NotConverged { iterations: usize, gap: f64 },

    #[error(transparent)]
    Core(#[from] handstate_core::Error),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;
