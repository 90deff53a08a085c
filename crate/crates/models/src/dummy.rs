//! Mean predictor: ignores its input and returns the training-label means.

use handstate_core::model_state::{ModelKind, ModelSpec, ModelState};
use handstate_core::types::{AlignedSample, FeatureSubset};
use handstate_core::Scalar;

use crate::data::fit_norm;
use crate::error::{ModelError, Result};

pub fn train_dummy<T: Scalar>(samples: &[AlignedSample<T>], subset: FeatureSubset) -> Result<ModelState<T>> {
    let labels: Vec<_> = samples.iter().filter_map(|s| s.y).collect();
    if labels.is_empty() {
        return Err(ModelError::Validation("dummy model needs at least one label".into()));
    }
    let n = T::of_usize(labels.len());
    let y_o = labels.iter().map(|y| y.y_o).sum::<T>() / n;
    let y_c = labels.iter().map(|y| y.y_c).sum::<T>() / n;
    let state = ModelState {
        spec: ModelSpec::new(ModelKind::Dummy, subset),
        norm: fit_norm(samples, subset)?,
        params: vec![y_o, y_c],
        seed: 0,
    };
    state.validate()?;
    Ok(state)
}
