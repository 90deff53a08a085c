//! Shared foundation for hand-state estimation from exoskeleton and EMG
//! signals: domain types, dataset and model file formats, multi-rate
//! alignment, regression metrics and the synthetic protocol generator.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root fix it to [`Real`].

pub mod dataset;
pub mod error;
pub mod metrics;
pub mod model_state;
pub mod scalar;
pub mod sync;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default scalar type.
pub type Real = f64;

pub type TargetPair = types::TargetPair<Real>;
pub type ExoSample = types::ExoSample<Real>;
pub type EmgSample = types::EmgSample<Real>;
pub type TrackerSample = types::TrackerSample<Real>;
pub type RawSequence = types::RawSequence<Real>;
pub type AlignedSample = types::AlignedSample<Real>;
pub type Dataset = types::Dataset<Real>;
pub type ModelState = model_state::ModelState<Real>;
pub type Normalization = model_state::Normalization<Real>;

pub use dataset::{load_dataset, save_dataset};
pub use metrics::{r_squared, rmse, PerTarget};
pub use model_state::{load_model, save_model, ModelKind, ModelSpec, Optimizer, TrainConfig};
pub use sync::{align, synchronize_streams, AlignmentConfig};
pub use types::{FeatureSubset, Modality, Target};
