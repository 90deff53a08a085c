//! Trained-model descriptor and its JSON file format.
//!
//! ```text
//! { "spec": {...}, "norm": {"mean": [..], "std": [..]}, "params": [..], "seed": int }
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::types::FeatureSubset;

/// Standard deviations below this are replaced by 1 when normalizing.
pub const STD_FLOOR: f64 = 1e-8;

/// Number of regression outputs, `(y_o, y_c)`.
pub const OUTPUTS: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Dummy,
    Linear,
    Mlp,
    Svr,
    Lstm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Dummy,
        ModelKind::Linear,
        ModelKind::Mlp,
        ModelKind::Svr,
        ModelKind::Lstm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Dummy => "dummy",
            ModelKind::Linear => "linear",
            ModelKind::Mlp => "mlp",
            ModelKind::Svr => "svr",
            ModelKind::Lstm => "lstm",
        }
    }

    pub fn is_stateful(self) -> bool {
        self == ModelKind::Lstm
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown architecture '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Optimizer {
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
    /// Plain gradient descent.
    Sgd { lr: f64 },
}

impl Optimizer {
    pub fn adam(lr: f64) -> Self {
        Optimizer::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            Optimizer::Adam { lr, .. } | Optimizer::Sgd { lr } => lr,
        }
    }
}

/// Training hyperparameters. Loss is always mean squared error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub epochs: usize,
    /// Rows per step for the MLP; sequences per step for the LSTM.
    /// `None` uses the architecture default (64 rows, 1 sequence).
    pub batch: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::adam(1e-3),
            epochs: 200,
            batch: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.optimizer.lr() <= 0.0 || !self.optimizer.lr().is_finite() {
            return Err(Error::Validation("learning rate must be positive".into()));
        }
        if self.batch == Some(0) {
            return Err(Error::Validation("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvrSpec {
    pub c: f64,
    pub epsilon: f64,
    pub gamma: f64,
    pub tol: f64,
    /// Support vectors kept per target, `[y_o, y_c]`.
    pub n_support: [usize; OUTPUTS],
}

/// Architecture descriptor. Together with `input_dim` it fixes the exact
/// parameter count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub features: FeatureSubset,
    pub feature_names: Vec<String>,
    pub input_dim: usize,
    /// MLP hidden widths, or LSTM layer widths.
    #[serde(default)]
    pub hidden: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub svr: Option<SvrSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, features: FeatureSubset) -> Self {
        let hidden = match kind {
            ModelKind::Mlp => vec![100, 100],
            ModelKind::Lstm => vec![32, 32],
            _ => vec![],
        };
        Self {
            kind,
            features,
            feature_names: features.column_names(),
            input_dim: features.width(),
            hidden,
            svr: None,
            train: None,
        }
    }

    pub fn with_hidden(mut self, hidden: Vec<usize>) -> Self {
        self.hidden = hidden;
        self
    }

    /// Layer widths of an MLP including input and output.
    pub fn mlp_sizes(&self) -> Vec<usize> {
        let mut s = Vec::with_capacity(self.hidden.len() + 2);
        s.push(self.input_dim);
        s.extend(&self.hidden);
        s.push(OUTPUTS);
        s
    }

    /// Exact parameter count implied by the descriptor.
    pub fn param_count(&self) -> Result<usize> {
        let d = self.input_dim;
        Ok(match self.kind {
            ModelKind::Dummy => OUTPUTS,
            ModelKind::Linear => OUTPUTS * (d + 1),
            ModelKind::Mlp => self
                .mlp_sizes()
                .windows(2)
                .map(|w| w[1] * (w[0] + 1))
                .sum(),
            ModelKind::Lstm => {
                if self.hidden.is_empty() {
                    return Err(Error::Validation("LSTM needs at least one layer".into()));
                }
                let mut n = 0;
                let mut input = d;
                for &h in &self.hidden {
                    n += 4 * h * (input + h) + 4 * h;
                    input = h;
                }
                n + OUTPUTS * input + OUTPUTS
            }
            ModelKind::Svr => {
                let svr = self
                    .svr
                    .as_ref()
                    .ok_or_else(|| Error::Validation("SVR spec missing 'svr' block".into()))?;
                svr.n_support.iter().map(|n| 1 + n * (d + 1)).sum()
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim != self.features.width() {
            return Err(Error::Validation(format!(
                "input_dim {} does not match feature subset {} ({} columns)",
                self.input_dim,
                self.features,
                self.features.width()
            )));
        }
        if self.feature_names != self.features.column_names() {
            return Err(Error::Validation(format!(
                "feature header {:?} does not match expected order {:?}",
                self.feature_names,
                self.features.column_names()
            )));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Validation("zero-width hidden layer".into()));
        }
        self.param_count().map(|_| ())
    }
}

/// Per-feature z-score statistics from the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Normalization<T: Scalar> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

impl<T: Scalar> Normalization<T> {
    /// Population mean and standard deviation of each column; std below
    /// [`STD_FLOOR`] becomes 1.
    pub fn fit<'a, I>(rows: I, dim: usize) -> Self
    where
        I: IntoIterator<Item = &'a [T]>,
    {
        let mut n = 0usize;
        let mut sum = vec![0.0f64; dim];
        let mut sumsq = vec![0.0f64; dim];
        let rows: Vec<&[T]> = rows.into_iter().collect();
        for r in &rows {
            for (j, v) in r.iter().enumerate() {
                sum[j] += v.as_f64();
            }
            n += 1;
        }
        let nf = n.max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        for r in &rows {
            for (j, v) in r.iter().enumerate() {
                let d = v.as_f64() - mean[j];
                sumsq[j] += d * d;
            }
        }
        let std = sumsq
            .iter()
            .map(|s| {
                let sd = (s / nf).sqrt();
                if sd < STD_FLOOR || !sd.is_finite() {
                    T::one()
                } else {
                    T::of(sd)
                }
            })
            .collect();
        Self {
            mean: mean.into_iter().map(T::of).collect(),
            std,
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![T::zero(); dim],
            std: vec![T::one(); dim],
        }
    }

    pub fn apply(&self, row: &[T], out: &mut [T]) {
        for (((o, &x), &m), &s) in out.iter_mut().zip(row).zip(&self.mean).zip(&self.std) {
            *o = (x - m) / s;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ModelState<T: Scalar> {
    pub spec: ModelSpec,
    pub norm: Normalization<T>,
    pub params: Vec<T>,
    pub seed: u64,
}

impl<T: Scalar> ModelState<T> {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let expected = self.spec.param_count()?;
        if self.params.len() != expected {
            return Err(Error::Validation(format!(
                "{} model has {} parameters, spec implies {}",
                self.spec.kind,
                self.params.len(),
                expected
            )));
        }
        let d = self.spec.input_dim;
        if self.norm.mean.len() != d || self.norm.std.len() != d {
            return Err(Error::Validation(format!(
                "normalization has {}/{} entries, expected {d}",
                self.norm.mean.len(),
                self.norm.std.len()
            )));
        }
        if self.norm.std.iter().any(|s| !(*s > T::zero())) {
            return Err(Error::Validation("normalization std must be positive".into()));
        }
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Validation("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string(self)
            .map_err(|e| Error::Validation(format!("serializing model: {e}")))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let m: Self =
            serde_json::from_str(text).map_err(|e| Error::format(origin, e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn cast<U: Scalar>(&self) -> ModelState<U> {
        let c = |v: &T| U::of(v.as_f64());
        ModelState {
            spec: self.spec.clone(),
            norm: Normalization {
                mean: self.norm.mean.iter().map(c).collect(),
                std: self.norm.std.iter().map(c).collect(),
            },
            params: self.params.iter().map(c).collect(),
            seed: self.seed,
        }
    }
}

pub fn save_model<T: Scalar>(m: &ModelState<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    m.validate()?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, m.to_json()?).map_err(|e| Error::io(path, e))
}

pub fn load_model<T: Scalar>(path: impl AsRef<Path>) -> Result<ModelState<T>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ModelState::from_json(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mlp_parameter_count() {
        let spec = ModelSpec::new(ModelKind::Mlp, FeatureSubset::Full);
        assert_eq!(spec.param_count().unwrap(), 10 * 100 + 100 + 100 * 100 + 100 + 100 * 2 + 2);
        assert_eq!(spec.param_count().unwrap(), 11_402);
    }

    #[test]
    fn lstm_parameter_count() {
        let spec = ModelSpec::new(ModelKind::Lstm, FeatureSubset::Full);
        assert_eq!(spec.param_count().unwrap(), 5_504 + 8_320 + 66);
        assert_eq!(spec.param_count().unwrap(), 13_890);
    }

    #[test]
    fn small_parameter_counts() {
        assert_eq!(ModelSpec::new(ModelKind::Dummy, FeatureSubset::Full).param_count().unwrap(), 2);
        assert_eq!(ModelSpec::new(ModelKind::Linear, FeatureSubset::ExoOnly).param_count().unwrap(), 6);
        let mut svr = ModelSpec::new(ModelKind::Svr, FeatureSubset::Full);
        assert!(svr.param_count().is_err());
        svr.svr = Some(SvrSpec { c: 1.0, epsilon: 0.1, gamma: 0.1, tol: 1e-3, n_support: [3, 0] });
        assert_eq!(svr.param_count().unwrap(), 1 + 3 * 11 + 1);
    }

    #[test]
    fn std_floor_replaces_constant_columns() {
        let rows: Vec<Vec<f64>> = vec![vec![1.0, 5.0], vec![3.0, 5.0]];
        let n = Normalization::fit(rows.iter().map(|r| r.as_slice()), 2);
        assert_eq!(n.mean, vec![2.0, 5.0]);
        assert_eq!(n.std, vec![1.0, 1.0]);
        let rows: Vec<Vec<f64>> = vec![vec![0.0], vec![4.0]];
        let n = Normalization::fit(rows.iter().map(|r| r.as_slice()), 1);
        assert_eq!(n.std, vec![2.0]);
    }

    #[test]
    fn shuffled_feature_header_is_rejected() {
        let mut spec = ModelSpec::new(ModelKind::Linear, FeatureSubset::ExoOnly);
        spec.feature_names.swap(0, 1);
        assert!(spec.validate().is_err());
    }
}
