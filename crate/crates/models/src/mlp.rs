//! Fully connected network: tanh hidden layers, identity output.
//!
//! Parameters are stored layer by layer, each as a row-major `out x in`
//! weight matrix followed by `out` biases. With no hidden layers this is the
//! same layout as the closed-form linear model.

use handstate_core::model_state::{ModelKind, ModelSpec, ModelState, TrainConfig, OUTPUTS};
use handstate_core::scalar::{axpy, dot};
use handstate_core::types::AlignedSample;
use handstate_core::Scalar;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{fit_norm, labeled_rows, Rows};
use crate::error::{ModelError, Result};
use crate::optim::OptimizerState;

pub const DEFAULT_BATCH: usize = 64;

/// Xavier/Glorot uniform draws in `[-a, a]`, `a = sqrt(6 / (fan_in + fan_out))`.
pub(crate) fn xavier<T: Scalar>(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, out: &mut [T]) {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in out {
        *v = T::of(rng.gen_range(-a..a));
    }
}

/// Seeded initial parameters for the given layer widths.
pub fn init_params<T: Scalar>(sizes: &[usize], seed: u64) -> Vec<T> {
    let n: usize = sizes.windows(2).map(|w| w[1] * (w[0] + 1)).sum();
    let mut p = vec![T::zero(); n];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut off = 0;
    for w in sizes.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        xavier(&mut rng, fan_in, fan_out, &mut p[off..off + fan_in * fan_out]);
        off += fan_out * (fan_in + 1);
    }
    p
}

/// Activations of every layer for one input; `acts[0]` is the input.
pub(crate) struct Forward<T: Scalar> {
    pub acts: Vec<Vec<T>>,
}

impl<T: Scalar> Forward<T> {
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            acts: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn output(&self) -> &[T] {
        self.acts.last().expect("at least one layer")
    }
}

pub(crate) fn forward<T: Scalar>(params: &[T], sizes: &[usize], x: &[T], f: &mut Forward<T>) {
    f.acts[0].copy_from_slice(x);
    let layers = sizes.len() - 1;
    let mut off = 0;
    for l in 0..layers {
        let (n_in, n_out) = (sizes[l], sizes[l + 1]);
        let (w, rest) = params[off..].split_at(n_in * n_out);
        let b = &rest[..n_out];
        let (prev, next) = f.acts.split_at_mut(l + 1);
        let input = &prev[l];
        let out = &mut next[0];
        for o in 0..n_out {
            let z = dot(&w[o * n_in..(o + 1) * n_in], input) + b[o];
            out[o] = if l + 1 < layers { z.tanh() } else { z };
        }
        off += n_out * (n_in + 1);
    }
}

/// Mean squared error over `idx` rows and both outputs; accumulates its
/// gradient into `grad` (which is overwritten).
pub fn loss_and_grad<T: Scalar>(
    params: &[T],
    sizes: &[usize],
    rows: &Rows<T>,
    idx: &[usize],
    grad: &mut [T],
) -> T {
    grad.iter_mut().for_each(|g| *g = T::zero());
    let layers = sizes.len() - 1;
    let mut fw = Forward::new(sizes);
    let mut delta: Vec<Vec<T>> = sizes.iter().map(|&n| vec![T::zero(); n]).collect();
    let scale = T::one() / T::of_usize(idx.len() * OUTPUTS);
    let two = T::of(2.0);
    let mut loss = T::zero();

    // Parameter offsets per layer.
    let mut offs = Vec::with_capacity(layers);
    let mut off = 0;
    for l in 0..layers {
        offs.push(off);
        off += sizes[l + 1] * (sizes[l] + 1);
    }

    for &i in idx {
        forward(params, sizes, rows.row(i), &mut fw);
        let y = rows.target(i);
        for (o, (&p, &t)) in fw.output().iter().zip(y).enumerate() {
            let e = p - t;
            loss += e * e;
            delta[layers][o] = two * e * scale;
        }
        for l in (0..layers).rev() {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let wo = offs[l];
            let bo = wo + n_in * n_out;
            let (dlo, dhi) = delta.split_at_mut(l + 1);
            let d_out = &dhi[0];
            let d_in = &mut dlo[l];
            if l > 0 {
                d_in.iter_mut().for_each(|v| *v = T::zero());
            }
            for o in 0..n_out {
                let d = d_out[o];
                axpy(d, &fw.acts[l], &mut grad[wo + o * n_in..wo + (o + 1) * n_in]);
                grad[bo + o] += d;
                if l > 0 {
                    axpy(d, &params[wo + o * n_in..wo + (o + 1) * n_in], d_in);
                }
            }
            if l > 0 {
                // Through tanh of layer l.
                for (d, a) in d_in.iter_mut().zip(&fw.acts[l]) {
                    *d *= T::one() - *a * *a;
                }
            }
        }
    }
    loss * scale
}

/// Mean squared error over `idx` rows without gradients.
pub fn loss<T: Scalar>(params: &[T], sizes: &[usize], rows: &Rows<T>, idx: &[usize]) -> T {
    let mut fw = Forward::new(sizes);
    let mut acc = T::zero();
    for &i in idx {
        forward(params, sizes, rows.row(i), &mut fw);
        for (&p, &t) in fw.output().iter().zip(rows.target(i)) {
            acc += (p - t) * (p - t);
        }
    }
    acc / T::of_usize(idx.len() * OUTPUTS)
}

/// Raw (unclamped) outputs for one normalized input.
pub(crate) fn predict_raw<T: Scalar>(params: &[T], sizes: &[usize], z: &[T], fw: &mut Forward<T>) -> [T; OUTPUTS] {
    forward(params, sizes, z, fw);
    let out = fw.output();
    [out[0], out[1]]
}

/// Minibatch training of an MLP described by `spec` (hidden widths may be
/// empty for a gradient-descent linear model).
pub fn train_mlp<T: Scalar>(
    samples: &[AlignedSample<T>],
    spec: &ModelSpec,
    cfg: &TrainConfig,
) -> Result<ModelState<T>> {
    if spec.kind != ModelKind::Mlp {
        return Err(ModelError::Validation(format!("train_mlp given a {} spec", spec.kind)));
    }
    spec.validate()?;
    cfg.validate()?;
    let norm = fit_norm(samples, spec.features)?;
    let rows = labeled_rows(samples, spec.features, &norm)?;
    if rows.is_empty() {
        return Err(ModelError::Validation("no labeled samples to train on".into()));
    }
    let sizes = spec.mlp_sizes();
    let mut params = init_params::<T>(&sizes, cfg.seed);
    let mut grad = vec![T::zero(); params.len()];
    let mut opt = OptimizerState::new(cfg.optimizer, params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_0F_BA7C);
    let batch = cfg.batch.unwrap_or(DEFAULT_BATCH).min(rows.len());
    let mut order: Vec<usize> = (0..rows.len()).collect();

    for epoch in 0..cfg.epochs {
        if batch < rows.len() {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = T::zero();
        for chunk in order.chunks(batch) {
            let loss = loss_and_grad(&params, &sizes, &rows, chunk, &mut grad);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(ModelError::Diverged {
                    epoch,
                    message: format!("loss became {loss}"),
                });
            }
            epoch_loss += loss;
            opt.apply(&mut params, &grad);
        }
        log::trace!("mlp epoch {epoch}: loss {epoch_loss}");
    }

    let mut spec = spec.clone();
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
