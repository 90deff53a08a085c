//! Finite-difference verification of the analytic gradients.

use handstate_core::model_state::{ModelKind, ModelSpec};
use handstate_core::types::FeatureSubset;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Rows, SeqRows};
use crate::error::{ModelError, Result};
use crate::lstm::{self, LstmLayout};
use crate::mlp;
use twofloat::TwoFloat;

pub const STEP: f64 = 1e-5;
pub const MLP_SAMPLES: usize = 30;
pub const LSTM_STEPS: usize = 20;
/// Entries whose double-precision estimate disagrees by more than this are
/// re-evaluated in double-double arithmetic, where the subtraction of two
/// nearly equal losses no longer loses the digits that matter.
pub const REFINE_ABOVE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradientCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub parameters: usize,
    /// Entries re-evaluated in extended precision.
    pub refined: usize,
}

/// `|a - n| / max(1e-12, |a| + |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-12)
}

/// Compares an analytic gradient against central differences of `loss`.
/// `precise(params, i)` returns an extended-precision central difference
/// for entry `i`, used where the plain estimate is rounding-limited.
pub fn compare(
    params: &[f64],
    analytic: &[f64],
    mut loss: impl FnMut(&[f64]) -> f64,
    mut precise: impl FnMut(&[f64], usize) -> f64,
) -> GradientCheckReport {
    let mut p = params.to_vec();
    let mut worst = (0.0, 0);
    let mut refined = 0;
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + STEP;
        let up = loss(&p);
        p[i] = orig - STEP;
        let down = loss(&p);
        p[i] = orig;
        let mut e = relative_error(analytic[i], (up - down) / (2.0 * STEP));
        if e > REFINE_ABOVE {
            refined += 1;
            e = relative_error(analytic[i], precise(params, i));
        }
        if e > worst.0 {
            worst = (e, i);
        }
    }
    GradientCheckReport {
        max_rel_error: worst.0,
        worst_index: worst.1,
        parameters: p.len(),
        refined,
    }
}

/// Gradient check on a small seeded instance: 30 random samples for an MLP,
/// one 20-step sequence for an LSTM. Runs in `f64`.
pub fn gradient_check(spec: &ModelSpec, seed: u64) -> Result<GradientCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = spec.input_dim;
    match spec.kind {
        ModelKind::Mlp => {
            let sizes = spec.mlp_sizes();
            let params = mlp::init_params::<f64>(&sizes, seed);
            let rows = Rows {
                dim: d,
                x: (0..MLP_SAMPLES * d).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                y: (0..MLP_SAMPLES * 2).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            };
            let idx: Vec<usize> = (0..MLP_SAMPLES).collect();
            Ok(check_mlp(&params, &sizes, &rows, &idx))
        }
        ModelKind::Lstm => {
            let layout = LstmLayout::from_spec(spec);
            let params = lstm::init_params::<f64>(&layout, seed);
            let seq = SeqRows {
                dim: d,
                x: (0..LSTM_STEPS * d).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                y: (0..LSTM_STEPS)
                    .map(|_| Some([rng.gen_range(0.0..1.5), rng.gen_range(-1.0..1.0)]))
                    .collect(),
            };
            Ok(check_lstm(&params, &layout, &seq))
        }
        other => Err(ModelError::Validation(format!(
            "gradient check applies to mlp and lstm, not {other}"
        ))),
    }
}

pub fn check_mlp(params: &[f64], sizes: &[usize], rows: &Rows<f64>, idx: &[usize]) -> GradientCheckReport {
    let mut grad = vec![0.0; params.len()];
    mlp::loss_and_grad(params, sizes, rows, idx, &mut grad);
    compare(
        params,
        &grad,
        |p| mlp::loss(p, sizes, rows, idx),
        |p, i| central_difference(p, i, |q| extended::mlp_loss(q, sizes, rows, idx)),
    )
}

pub fn check_lstm(params: &[f64], layout: &LstmLayout, seq: &SeqRows<f64>) -> GradientCheckReport {
    let mut grad = vec![0.0; params.len()];
    lstm::loss_and_grad(params, layout, &[seq], &mut grad);
    compare(
        params,
        &grad,
        |p| lstm::sequence_loss(p, layout, seq),
        |p, i| central_difference(p, i, |q| extended::lstm_loss(q, layout, seq)),
    )
}

fn central_difference(params: &[f64], i: usize, loss: impl Fn(&[TwoFloat]) -> TwoFloat) -> f64 {
    let mut p: Vec<TwoFloat> = params.iter().map(|&v| TwoFloat::from(v)).collect();
    p[i] = TwoFloat::from(params[i]) + STEP;
    let up = loss(&p);
    p[i] = TwoFloat::from(params[i]) - STEP;
    let down = loss(&p);
    f64::from((up - down) / (2.0 * STEP))
}

/// Plain reference forward passes in double-double arithmetic.
mod extended {
    use twofloat::TwoFloat;

    use crate::data::{Rows, SeqRows};
    use crate::lstm::LstmLayout;

    fn zero() -> TwoFloat {
        TwoFloat::from(0.0)
    }

    fn sigmoid(x: TwoFloat) -> TwoFloat {
        (TwoFloat::from(1.0) + (-x).exp()).recip()
    }

    fn affine(w: &[TwoFloat], b: TwoFloat, x: &[TwoFloat]) -> TwoFloat {
        w.iter().zip(x).fold(b, |acc, (a, v)| acc + *a * *v)
    }

    pub fn mlp_loss(p: &[TwoFloat], sizes: &[usize], rows: &Rows<f64>, idx: &[usize]) -> TwoFloat {
        let mut total = zero();
        for &i in idx {
            let mut a: Vec<TwoFloat> = rows.row(i).iter().map(|&v| TwoFloat::from(v)).collect();
            let mut off = 0;
            for l in 0..sizes.len() - 1 {
                let (n_in, n_out) = (sizes[l], sizes[l + 1]);
                let hidden = l + 2 < sizes.len();
                a = (0..n_out)
                    .map(|o| {
                        let w = &p[off + o * n_in..off + (o + 1) * n_in];
                        let z = affine(w, p[off + n_in * n_out + o], &a);
                        if hidden {
                            z.tanh()
                        } else {
                            z
                        }
                    })
                    .collect();
                off += n_out * (n_in + 1);
            }
            for (y, t) in a.iter().zip(rows.target(i)) {
                let e = *y - *t;
                total += e * e;
            }
        }
        total / (idx.len() * 2) as f64
    }

    pub fn lstm_loss(p: &[TwoFloat], layout: &LstmLayout, seq: &SeqRows<f64>) -> TwoFloat {
        let nl = layout.hidden.len();
        let mut h: Vec<Vec<TwoFloat>> = layout.hidden.iter().map(|&n| vec![zero(); n]).collect();
        let mut c = h.clone();
        let mut total = zero();
        for (t, y) in seq.y.iter().enumerate() {
            let mut input: Vec<TwoFloat> = seq.x[t * seq.dim..(t + 1) * seq.dim]
                .iter()
                .map(|&v| TwoFloat::from(v))
                .collect();
            for l in 0..nl {
                let hs = layout.hidden[l];
                let (wo, bo) = layout.layers[l];
                let xh: Vec<TwoFloat> = input.iter().chain(&h[l]).copied().collect();
                let n = xh.len();
                let z: Vec<TwoFloat> = (0..4 * hs)
                    .map(|r| affine(&p[wo + r * n..wo + (r + 1) * n], p[bo + r], &xh))
                    .collect();
                for j in 0..hs {
                    let i_g = sigmoid(z[j]);
                    let f_g = sigmoid(z[hs + j]);
                    let g_g = z[2 * hs + j].tanh();
                    let o_g = sigmoid(z[3 * hs + j]);
                    c[l][j] = f_g * c[l][j] + i_g * g_g;
                    h[l][j] = o_g * c[l][j].tanh();
                }
                input = h[l].clone();
            }
            if let Some(y) = y {
                let top = input.len();
                for (o, target) in y.iter().enumerate() {
                    let w = &p[layout.out_w + o * top..layout.out_w + (o + 1) * top];
                    let e = affine(w, p[layout.out_b + o], &input) - *target;
                    total += e * e;
                }
            }
        }
        total / (seq.labeled().max(1) * 2) as f64
    }
}

/// Default-shaped spec used by the checks.
pub fn default_spec(kind: ModelKind) -> ModelSpec {
    ModelSpec::new(kind, FeatureSubset::Full)
}
