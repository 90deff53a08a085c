//! Per-target RMSE and coefficient of determination.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::types::{Target, TargetPair};

/// One value per regression target.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct PerTarget<V> {
    pub y_o: V,
    pub y_c: V,
}

impl<V> PerTarget<V> {
    pub fn get(&self, target: Target) -> &V {
        match target {
            Target::Opening => &self.y_o,
            Target::Compliance => &self.y_c,
        }
    }

    pub fn map<U>(self, mut f: impl FnMut(V) -> U) -> PerTarget<U> {
        PerTarget {
            y_o: f(self.y_o),
            y_c: f(self.y_c),
        }
    }
}

fn check_lengths<T: Scalar>(pred: &[TargetPair<T>], truth: &[TargetPair<T>], min: usize) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Validation(format!(
            "prediction/truth length mismatch: {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    if pred.len() < min {
        return Err(Error::Validation(format!(
            "need at least {min} samples, got {}",
            pred.len()
        )));
    }
    Ok(())
}

/// Root-mean-square error of one target.
pub fn rmse_target<T: Scalar>(pred: &[TargetPair<T>], truth: &[TargetPair<T>], target: Target) -> Result<T> {
    check_lengths(pred, truth, 1)?;
    let sse: T = pred
        .iter()
        .zip(truth)
        .map(|(p, y)| {
            let d = p.get(target) - y.get(target);
            d * d
        })
        .sum();
    Ok((sse / T::of_usize(pred.len())).sqrt())
}

pub fn rmse<T: Scalar>(pred: &[TargetPair<T>], truth: &[TargetPair<T>]) -> Result<PerTarget<T>> {
    Ok(PerTarget {
        y_o: rmse_target(pred, truth, Target::Opening)?,
        y_c: rmse_target(pred, truth, Target::Compliance)?,
    })
}

/// `1 - SS_res / SS_tot` for one target, with the truth mean taken over the
/// whole evaluation pool.
pub fn r_squared_target<T: Scalar>(pred: &[TargetPair<T>], truth: &[TargetPair<T>], target: Target) -> Result<T> {
    check_lengths(pred, truth, 2)?;
    let n = T::of_usize(truth.len());
    let mean = truth.iter().map(|y| y.get(target)).sum::<T>() / n;
    let ss_tot: T = truth
        .iter()
        .map(|y| {
            let d = y.get(target) - mean;
            d * d
        })
        .sum();
    if ss_tot == T::zero() {
        return Err(Error::UndefinedMetric(format!(
            "R^2 of {target}: ground truth has zero variance"
        )));
    }
    let ss_res: T = pred
        .iter()
        .zip(truth)
        .map(|(p, y)| {
            let d = y.get(target) - p.get(target);
            d * d
        })
        .sum();
    Ok(T::one() - ss_res / ss_tot)
}

pub fn r_squared<T: Scalar>(pred: &[TargetPair<T>], truth: &[TargetPair<T>]) -> Result<PerTarget<T>> {
    Ok(PerTarget {
        y_o: r_squared_target(pred, truth, Target::Opening)?,
        y_c: r_squared_target(pred, truth, Target::Compliance)?,
    })
}
