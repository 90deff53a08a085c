//! Ordinary least squares on z-scored features via ridge-damped normal
//! equations.

use handstate_core::model_state::{ModelKind, ModelSpec, ModelState, TrainConfig, OUTPUTS};
use handstate_core::types::{AlignedSample, FeatureSubset};
use handstate_core::Scalar;

use crate::data::{fit_norm, labeled_rows};
use crate::error::{ModelError, Result};

/// Damping added to the Gram matrix diagonal.
pub const RIDGE: f64 = 1e-8;

/// Fits one weight row per target plus biases. Deterministic; the config
/// seed is recorded but unused.
pub fn train_linear<T: Scalar>(
    samples: &[AlignedSample<T>],
    subset: FeatureSubset,
    cfg: &TrainConfig,
) -> Result<ModelState<T>> {
    let norm = fit_norm(samples, subset)?;
    let rows = labeled_rows(samples, subset, &norm)?;
    if rows.is_empty() {
        return Err(ModelError::Validation("no labeled samples to train on".into()));
    }
    let d = rows.dim;
    let p = d + 1;
    // Accumulate X^T X and X^T Y in f64 with a trailing bias column.
    let mut gram = vec![0.0f64; p * p];
    let mut rhs = vec![0.0f64; p * OUTPUTS];
    let mut xb = vec![0.0f64; p];
    for i in 0..rows.len() {
        for (j, v) in rows.row(i).iter().enumerate() {
            xb[j] = v.as_f64();
        }
        xb[d] = 1.0;
        for a in 0..p {
            for b in 0..=a {
                gram[a * p + b] += xb[a] * xb[b];
            }
            for (o, y) in rows.target(i).iter().enumerate() {
                rhs[a * OUTPUTS + o] += xb[a] * y.as_f64();
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            gram[b * p + a] = gram[a * p + b];
        }
        gram[a * p + a] += RIDGE;
    }
    let l = cholesky(&gram, p)?;

    let mut params = vec![T::zero(); OUTPUTS * p];
    for o in 0..OUTPUTS {
        let col: Vec<f64> = (0..p).map(|a| rhs[a * OUTPUTS + o]).collect();
        let w = cholesky_solve(&l, p, &col);
        for j in 0..d {
            params[o * d + j] = T::of(w[j]);
        }
        params[OUTPUTS * d + o] = T::of(w[d]);
    }

    let mut spec = ModelSpec::new(ModelKind::Linear, subset);
    spec.train = Some(cfg.clone());
    let state = ModelState {
        spec,
        norm,
        params,
        seed: cfg.seed,
    };
    state.validate()?;
    Ok(state)
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
fn cholesky(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum();
            if i == j {
                let v = a[i * n + i] - s;
                if !(v > 0.0) {
                    return Err(ModelError::Validation(
                        "normal equations are not positive definite".into(),
                    ));
                }
                l[i * n + i] = v.sqrt();
            } else {
                l[i * n + j] = (a[i * n + j] - s) / l[j * n + j];
            }
        }
    }
    Ok(l)
}

fn cholesky_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i * n + k] * y[k]).sum();
        y[i] = (b[i] - s) / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k * n + i] * x[k]).sum();
        x[i] = (y[i] - s) / l[i * n + i];
    }
    x
}
