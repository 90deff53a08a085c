//! Inference over a trained [`ModelState`]: normalization, the forward map
//! of each architecture, and clamping to the physical target ranges.

use handstate_core::model_state::{ModelKind, ModelState, OUTPUTS};
use handstate_core::types::{AlignedSample, TargetPair, FEATURES};
use handstate_core::Scalar;

use crate::data::check_row;
use crate::error::{ModelError, Result};
use crate::lstm::{self, LstmLayout, LstmState};
use crate::mlp::{self, Forward};
use crate::svr;

/// A validated model ready for prediction. Immutable and shareable; the
/// per-stream recurrent state lives in [`PredictState`].
#[derive(Clone, Debug)]
pub struct Model<T: Scalar> {
    state: ModelState<T>,
    shape: Shape,
}

#[derive(Clone, Debug)]
enum Shape {
    Dummy,
    Dense(Vec<usize>),
    Svr { n_support: [usize; OUTPUTS], gamma: f64 },
    Lstm(LstmLayout),
}

/// Mutable per-stream state: LSTM memory plus scratch buffers.
pub struct PredictState<T: Scalar> {
    lstm: Option<LstmState<T>>,
    dense: Option<Forward<T>>,
    z: Vec<T>,
}

impl<T: Scalar> PredictState<T> {
    /// Returns the recurrent state to zeros (a new sequence starts).
    pub fn reset(&mut self) {
        if let Some(s) = &mut self.lstm {
            s.reset();
        }
    }
}

impl<T: Scalar> Model<T> {
    pub fn new(state: ModelState<T>) -> Result<Self> {
        state.validate()?;
        let spec = &state.spec;
        let shape = match spec.kind {
            ModelKind::Dummy => Shape::Dummy,
            ModelKind::Linear => Shape::Dense(vec![spec.input_dim, OUTPUTS]),
            ModelKind::Mlp => Shape::Dense(spec.mlp_sizes()),
            ModelKind::Svr => {
                let s = spec.svr.as_ref().expect("validated SVR spec");
                Shape::Svr {
                    n_support: s.n_support,
                    gamma: s.gamma,
                }
            }
            ModelKind::Lstm => Shape::Lstm(LstmLayout::from_spec(spec)),
        };
        Ok(Self { state, shape })
    }

    pub fn state(&self) -> &ModelState<T> {
        &self.state
    }

    pub fn into_state(self) -> ModelState<T> {
        self.state
    }

    pub fn kind(&self) -> ModelKind {
        self.state.spec.kind
    }

    pub fn new_state(&self) -> PredictState<T> {
        PredictState {
            lstm: match &self.shape {
                Shape::Lstm(layout) => Some(LstmState::zeros(layout)),
                _ => None,
            },
            dense: match &self.shape {
                Shape::Dense(sizes) => Some(Forward::new(sizes)),
                _ => None,
            },
            z: vec![T::zero(); self.state.spec.input_dim],
        }
    }

    /// Unclamped output for one full-width feature row, advancing `st` for
    /// recurrent models.
    pub fn step_raw(&self, st: &mut PredictState<T>, row: &[T]) -> Result<[T; OUTPUTS]> {
        check_row(row)?;
        let cols = self.state.spec.features.columns();
        self.state.norm.apply(&row[cols], &mut st.z);
        let p = &self.state.params;
        Ok(match &self.shape {
            Shape::Dummy => [p[0], p[1]],
            Shape::Dense(sizes) => {
                let fw = st.dense.as_mut().expect("dense scratch");
                mlp::predict_raw(p, sizes, &st.z, fw)
            }
            Shape::Svr { n_support, gamma } => {
                let d = self.state.spec.input_dim;
                let mut y = [T::zero(); OUTPUTS];
                let mut off = 0;
                for (o, &n_sv) in n_support.iter().enumerate() {
                    let len = 1 + n_sv * (d + 1);
                    y[o] = T::of(svr::decision(&p[off..off + len], n_sv, d, *gamma, &st.z));
                    off += len;
                }
                y
            }
            Shape::Lstm(layout) => {
                let s = st.lstm.as_mut().expect("lstm state");
                lstm::step(p, layout, s, &st.z)
            }
        })
    }

    /// Clamped prediction for one row.
    pub fn step(&self, st: &mut PredictState<T>, row: &[T]) -> Result<TargetPair<T>> {
        let [y_o, y_c] = self.step_raw(st, row)?;
        Ok(TargetPair::clamped(y_o, y_c))
    }

    /// Predicts a contiguous run of rows starting from a fresh state.
    pub fn predict_rows<R: AsRef<[T]>>(&self, rows: &[R]) -> Result<Vec<TargetPair<T>>> {
        let mut st = self.new_state();
        rows.iter().map(|r| self.step(&mut st, r.as_ref())).collect()
    }

    /// Predicts one aligned sequence from a fresh state.
    pub fn predict_sequence(&self, samples: &[AlignedSample<T>]) -> Vec<TargetPair<T>> {
        let mut st = self.new_state();
        samples
            .iter()
            .map(|s| {
                self.step(&mut st, &s.features())
                    .expect("aligned rows always have full width")
            })
            .collect()
    }
}

/// Checks a batch of rows for the full feature width.
pub fn check_rows<T: Scalar, R: AsRef<[T]>>(rows: &[R]) -> Result<()> {
    for r in rows {
        if r.as_ref().len() != FEATURES {
            return Err(ModelError::Validation(format!(
                "feature row has {} components, expected {FEATURES}",
                r.as_ref().len()
            )));
        }
    }
    Ok(())
}
