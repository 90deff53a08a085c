//! Architecture dispatch: one entry point for all five regressors.

use handstate_core::model_state::{ModelKind, ModelSpec, ModelState, TrainConfig};
use handstate_core::types::{AlignedSample, FeatureSubset};
use handstate_core::Scalar;

use crate::dummy::train_dummy;
use crate::error::Result;
use crate::linear::train_linear;
use crate::lstm::train_lstm;
use crate::mlp::train_mlp;
use crate::svr::{train_svr, SvrParams};

/// Architecture with its default shape for the given feature subset.
pub fn default_spec(kind: ModelKind, features: FeatureSubset) -> ModelSpec {
    ModelSpec::new(kind, features)
}

/// Trains `spec` on a set of aligned sequences. Stateless models see the
/// pooled rows; the LSTM trains over whole sequences.
pub fn train<T: Scalar>(
    sequences: &[&[AlignedSample<T>]],
    spec: &ModelSpec,
    cfg: &TrainConfig,
) -> Result<ModelState<T>> {
    let pooled = || -> Vec<AlignedSample<T>> { sequences.iter().flat_map(|s| s.iter().copied()).collect() };
    match spec.kind {
        ModelKind::Dummy => train_dummy(&pooled(), spec.features),
        ModelKind::Linear => train_linear(&pooled(), spec.features, cfg),
        ModelKind::Mlp => train_mlp(&pooled(), spec, cfg),
        ModelKind::Svr => {
            let params = match &spec.svr {
                Some(s) => SvrParams {
                    c: s.c,
                    epsilon: s.epsilon,
                    gamma: Some(s.gamma),
                    tol: s.tol,
                    ..SvrParams::default()
                },
                None => SvrParams::default(),
            };
            train_svr(&pooled(), spec, &params)
        }
        ModelKind::Lstm => train_lstm(sequences, spec, cfg),
    }
}
