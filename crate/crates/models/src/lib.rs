//! The five hand-state regressors (mean predictor, linear least squares,
//! MLP, epsilon-SVR and a stacked LSTM), their training loops, gradient
//! checks and a common prediction interface.

pub mod data;
pub mod dummy;
pub mod error;
pub mod gradcheck;
pub mod linear;
pub mod lstm;
pub mod mlp;
pub mod optim;
pub mod predict;
pub mod svr;
pub mod train;

pub use dummy::train_dummy;
pub use error::{ModelError, Result};
pub use gradcheck::{gradient_check, GradientCheckReport};
pub use linear::train_linear;
pub use lstm::train_lstm;
pub use mlp::train_mlp;
pub use predict::{Model, PredictState};
pub use svr::{train_svr, SvrParams};
pub use train::{default_spec, train};
