//! Metric reports, cross-user aggregation and the CSV result tables.

use std::fs::File;
use std::path::Path;

use handstate_core::metrics::{r_squared, rmse, PerTarget};
use handstate_core::model_state::ModelKind;
use handstate_core::types::{FeatureSubset, Target, TargetPair};
use handstate_core::Scalar;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{EvalError, Result};

/// Confidence level of the cross-user intervals.
pub const CONFIDENCE: f64 = 0.80;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    R2,
    Rmse,
}

impl Metric {
    pub const ALL: [Metric; 2] = [Metric::R2, Metric::Rmse];

    pub fn name(self) -> &'static str {
        match self {
            Metric::R2 => "r2",
            Metric::Rmse => "rmse",
        }
    }
}

/// Pooled metrics of one evaluation group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// User whose data was evaluated.
    pub user: String,
    pub architecture: ModelKind,
    pub subset: FeatureSubset,
    pub samples: usize,
    pub r2: PerTarget<f64>,
    pub rmse: PerTarget<f64>,
}

impl MetricsReport {
    /// Computes both metrics once over the whole pool.
    pub fn pooled<T: Scalar>(
        user: &str,
        architecture: ModelKind,
        subset: FeatureSubset,
        pred: &[TargetPair<T>],
        truth: &[TargetPair<T>],
    ) -> Result<Self> {
        Ok(Self {
            user: user.to_string(),
            architecture,
            subset,
            samples: pred.len(),
            r2: r_squared(pred, truth)?.map(|v| v.as_f64()),
            rmse: rmse(pred, truth)?.map(|v| v.as_f64()),
        })
    }

    pub fn value(&self, metric: Metric, target: Target) -> f64 {
        match metric {
            Metric::R2 => *self.r2.get(target),
            Metric::Rmse => *self.rmse.get(target),
        }
    }
}

/// One row of the results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub user: String,
    pub architecture: ModelKind,
    pub subset: FeatureSubset,
    pub target: Target,
    pub metric: Metric,
    pub value: f64,
}

pub fn result_rows(reports: &[MetricsReport]) -> Vec<ResultRow> {
    let mut rows = Vec::with_capacity(reports.len() * 4);
    for r in reports {
        for target in Target::ALL {
            for metric in Metric::ALL {
                rows.push(ResultRow {
                    user: r.user.clone(),
                    architecture: r.architecture,
                    subset: r.subset,
                    target,
                    metric,
                    value: r.value(metric, target),
                });
            }
        }
    }
    rows
}

/// Cross-user summary of one (architecture, subset, target, metric) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub architecture: ModelKind,
    pub subset: FeatureSubset,
    pub target: Target,
    pub metric: Metric,
    pub users: usize,
    pub mean: f64,
    /// Interval bounds; absent with a single user.
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

/// Two-sided t interval of the mean at [`CONFIDENCE`] with `n - 1` degrees
/// of freedom; `None` when `n < 2`.
pub fn confidence_interval(values: &[f64]) -> Option<(f64, f64)> {
    let n = values.len();
    if n < 2 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.5 + CONFIDENCE / 2.0);
    let half = t * (var / n as f64).sqrt();
    Some((mean - half, mean + half))
}

/// Groups result rows by cell, in first-seen order, averaging users with
/// equal weight.
pub fn aggregate(rows: &[ResultRow]) -> Vec<Cell> {
    let mut keys: Vec<(ModelKind, FeatureSubset, Target, Metric)> = Vec::new();
    for r in rows {
        let k = (r.architecture, r.subset, r.target, r.metric);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(architecture, subset, target, metric)| {
            let values: Vec<f64> = rows
                .iter()
                .filter(|r| r.architecture == architecture && r.subset == subset && r.target == target && r.metric == metric)
                .map(|r| r.value)
                .collect();
            let ci = confidence_interval(&values);
            Cell {
                architecture,
                subset,
                target,
                metric,
                users: values.len(),
                mean: values.iter().sum::<f64>() / values.len() as f64,
                ci_low: ci.map(|c| c.0),
                ci_high: ci.map(|c| c.1),
            }
        })
        .collect()
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> EvalError + '_ {
    move |source| EvalError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn write_rows<R: Serialize>(rows: &[R], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| csv_err(path)(e.into()))?;
    Ok(())
}

pub fn write_results_csv(rows: &[ResultRow], path: impl AsRef<Path>) -> Result<()> {
    write_rows(rows, path.as_ref())
}

pub fn write_summary_csv(cells: &[Cell], path: impl AsRef<Path>) -> Result<()> {
    write_rows(cells, path.as_ref())
}

pub fn read_results_csv(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| csv_err(path)(e.into()))?;
    csv::Reader::from_reader(file)
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(csv_err(path))
}
