//! Stacked LSTM with a linear read-out, trained by full-sequence
//! backpropagation through time.
//!
//! Parameter layout, per layer: a row-major `4H x (in + H)` matrix acting on
//! `[x; h_prev]` with row blocks in gate order input, forget, candidate,
//! output, then `4H` biases. The read-out `2 x H` matrix and its 2 biases
//! come last.

use handstate_core::model_state::{ModelKind, ModelSpec, ModelState, TrainConfig, OUTPUTS};
use handstate_core::scalar::{axpy, dot, sigmoid};
use handstate_core::types::AlignedSample;
use handstate_core::Scalar;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{fit_norm, sequence_rows, SeqRows};
use crate::error::{ModelError, Result};
use crate::mlp::xavier;
use crate::optim::OptimizerState;

/// Bias of the forget gate at initialization.
pub const FORGET_BIAS: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LstmLayout {
    pub input: usize,
    pub hidden: Vec<usize>,
    /// (weight offset, bias offset) per layer.
    pub(crate) layers: Vec<(usize, usize)>,
    pub(crate) out_w: usize,
    pub(crate) out_b: usize,
    total: usize,
}

impl LstmLayout {
    pub fn new(input: usize, hidden: &[usize]) -> Self {
        let mut layers = Vec::with_capacity(hidden.len());
        let mut off = 0;
        let mut n_in = input;
        for &h in hidden {
            let w = off;
            let b = w + 4 * h * (n_in + h);
            layers.push((w, b));
            off = b + 4 * h;
            n_in = h;
        }
        let out_w = off;
        let out_b = out_w + OUTPUTS * n_in;
        Self {
            input,
            hidden: hidden.to_vec(),
            layers,
            out_w,
            out_b,
            total: out_b + OUTPUTS,
        }
    }

    pub fn from_spec(spec: &ModelSpec) -> Self {
        Self::new(spec.input_dim, &spec.hidden)
    }

    pub fn param_count(&self) -> usize {
        self.total
    }

    fn layer_input(&self, l: usize) -> usize {
        if l == 0 {
            self.input
        } else {
            self.hidden[l - 1]
        }
    }

    fn top(&self) -> usize {
        *self.hidden.last().expect("at least one layer")
    }
}

/// Seeded Xavier-uniform weights, zero biases except the forget gate.
pub fn init_params<T: Scalar>(layout: &LstmLayout, seed: u64) -> Vec<T> {
    let mut p = vec![T::zero(); layout.total];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (l, &(w, b)) in layout.layers.iter().enumerate() {
        let h = layout.hidden[l];
        let n_in = layout.layer_input(l) + h;
        for gate in 0..4 {
            let start = w + gate * h * n_in;
            xavier(&mut rng, n_in, h, &mut p[start..start + h * n_in]);
        }
        for v in &mut p[b + h..b + 2 * h] {
            *v = T::of(FORGET_BIAS);
        }
    }
    let top = layout.top();
    xavier(&mut rng, top, OUTPUTS, &mut p[layout.out_w..layout.out_w + OUTPUTS * top]);
    p
}

/// Recurrent state `(h, c)` of every layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState<T: Scalar> {
    pub h: Vec<Vec<T>>,
    pub c: Vec<Vec<T>>,
}

impl<T: Scalar> LstmState<T> {
    pub fn zeros(layout: &LstmLayout) -> Self {
        Self {
            h: layout.hidden.iter().map(|&h| vec![T::zero(); h]).collect(),
            c: layout.hidden.iter().map(|&h| vec![T::zero(); h]).collect(),
        }
    }

    pub fn reset(&mut self) {
        for v in self.h.iter_mut().chain(self.c.iter_mut()) {
            v.iter_mut().for_each(|x| *x = T::zero());
        }
    }
}

/// Per-step values kept for the backward pass, one buffer per layer laid
/// out step after step.
struct Tape<T: Scalar> {
    xh: Vec<Vec<T>>,
    gates: Vec<Vec<T>>,
    c: Vec<Vec<T>>,
    tanh_c: Vec<Vec<T>>,
    out: Vec<[T; OUTPUTS]>,
}

impl<T: Scalar> Tape<T> {
    fn new(layout: &LstmLayout, steps: usize) -> Self {
        let per = |f: &dyn Fn(usize, usize) -> usize| -> Vec<Vec<T>> {
            (0..layout.hidden.len())
                .map(|l| vec![T::zero(); steps * f(layout.layer_input(l), layout.hidden[l])])
                .collect()
        };
        Self {
            xh: per(&|i, h| i + h),
            gates: per(&|_, h| 4 * h),
            c: per(&|_, h| h),
            tanh_c: per(&|_, h| h),
            out: vec![[T::zero(); OUTPUTS]; steps],
        }
    }
}

/// One cell update. Writes gates (post-activation) into `gates`, the new
/// cell into `c` and the new hidden state into `h`.
#[inline]
#[allow(clippy::too_many_arguments)]
fn cell<T: Scalar>(
    w: &[T],
    b: &[T],
    xh: &[T],
    c_prev: &[T],
    hsz: usize,
    gates: &mut [T],
    c: &mut [T],
    tanh_c: &mut [T],
    h: &mut [T],
) {
    let n_in = xh.len();
    for (r, g) in gates.iter_mut().enumerate() {
        *g = dot(&w[r * n_in..(r + 1) * n_in], xh) + b[r];
    }
    for j in 0..hsz {
        let i = sigmoid(gates[j]);
        let f = sigmoid(gates[hsz + j]);
        let g = gates[2 * hsz + j].tanh();
        let o = sigmoid(gates[3 * hsz + j]);
        gates[j] = i;
        gates[hsz + j] = f;
        gates[2 * hsz + j] = g;
        gates[3 * hsz + j] = o;
        c[j] = f * c_prev[j] + i * g;
        tanh_c[j] = c[j].tanh();
        h[j] = o * tanh_c[j];
    }
}

/// Advances `state` by one input row and returns the raw read-out.
pub fn step<T: Scalar>(params: &[T], layout: &LstmLayout, state: &mut LstmState<T>, x: &[T]) -> [T; OUTPUTS] {
    let mut input: Vec<T> = x.to_vec();
    for (l, &(wo, bo)) in layout.layers.iter().enumerate() {
        let hsz = layout.hidden[l];
        let n_in = input.len() + hsz;
        let mut xh = Vec::with_capacity(n_in);
        xh.extend_from_slice(&input);
        xh.extend_from_slice(&state.h[l]);
        let mut gates = vec![T::zero(); 4 * hsz];
        let mut tanh_c = vec![T::zero(); hsz];
        let c_prev = state.c[l].clone();
        let w = &params[wo..wo + 4 * hsz * n_in];
        let b = &params[bo..bo + 4 * hsz];
        cell(w, b, &xh, &c_prev, hsz, &mut gates, &mut state.c[l], &mut tanh_c, &mut state.h[l]);
        input.clear();
        input.extend_from_slice(&state.h[l]);
    }
    readout(params, layout, &input)
}

#[inline]
fn readout<T: Scalar>(params: &[T], layout: &LstmLayout, h: &[T]) -> [T; OUTPUTS] {
    let top = h.len();
    let mut y = [T::zero(); OUTPUTS];
    for (o, v) in y.iter_mut().enumerate() {
        let w = &params[layout.out_w + o * top..layout.out_w + (o + 1) * top];
        *v = dot(w, h) + params[layout.out_b + o];
    }
    y
}

fn forward_tape<T: Scalar>(params: &[T], layout: &LstmLayout, seq: &SeqRows<T>, tape: &mut Tape<T>) {
    let steps = seq.len();
    let nl = layout.hidden.len();
    for t in 0..steps {
        for l in 0..nl {
            let hsz = layout.hidden[l];
            let n_x = layout.layer_input(l);
            let n_in = n_x + hsz;
            let (wo, bo) = layout.layers[l];
            // Split borrows: the input of layer l at step t is either the
            // sequence row or the hidden state of layer l-1 at step t.
            {
                let (below, here) = tape.xh.split_at_mut(l);
                let xh = &mut here[0][t * n_in..(t + 1) * n_in];
                if l == 0 {
                    xh[..n_x].copy_from_slice(&seq.x[t * n_x..(t + 1) * n_x]);
                } else {
                    let _ = below;
                    let hb = layout.hidden[l - 1];
                    let src = &tape.tanh_c[l - 1][t * hb..(t + 1) * hb];
                    let og = &tape.gates[l - 1][t * 4 * hb + 3 * hb..(t + 1) * 4 * hb];
                    for j in 0..hb {
                        xh[j] = og[j] * src[j];
                    }
                }
                if t == 0 {
                    xh[n_x..].iter_mut().for_each(|v| *v = T::zero());
                } else {
                    let tc = &tape.tanh_c[l][(t - 1) * hsz..t * hsz];
                    let og = &tape.gates[l][(t - 1) * 4 * hsz + 3 * hsz..t * 4 * hsz];
                    for j in 0..hsz {
                        xh[n_x + j] = og[j] * tc[j];
                    }
                }
            }
            let w = &params[wo..wo + 4 * hsz * n_in];
            let b = &params[bo..bo + 4 * hsz];
            let xh = &tape.xh[l][t * n_in..(t + 1) * n_in];
            let (c_done, c_rest) = tape.c[l].split_at_mut(t * hsz);
            let zero = vec![T::zero(); hsz];
            let c_prev: &[T] = if t == 0 { &zero } else { &c_done[(t - 1) * hsz..] };
            let mut h = vec![T::zero(); hsz];
            cell(
                w,
                b,
                xh,
                c_prev,
                hsz,
                &mut tape.gates[l][t * 4 * hsz..(t + 1) * 4 * hsz],
                &mut c_rest[..hsz],
                &mut tape.tanh_c[l][t * hsz..(t + 1) * hsz],
                &mut h,
            );
        }
        let top = layout.top();
        let l = nl - 1;
        let tc = &tape.tanh_c[l][t * top..(t + 1) * top];
        let og = &tape.gates[l][t * 4 * top + 3 * top..(t + 1) * 4 * top];
        let h: Vec<T> = og.iter().zip(tc).map(|(o, c)| *o * *c).collect();
        tape.out[t] = readout(params, layout, &h);
    }
}

/// Hidden state of layer `l` at step `t`, recomputed from the tape.
#[inline]
fn tape_h<T: Scalar>(tape: &Tape<T>, layout: &LstmLayout, l: usize, t: usize, out: &mut [T]) {
    let hsz = layout.hidden[l];
    let tc = &tape.tanh_c[l][t * hsz..(t + 1) * hsz];
    let og = &tape.gates[l][t * 4 * hsz + 3 * hsz..(t + 1) * 4 * hsz];
    for j in 0..hsz {
        out[j] = og[j] * tc[j];
    }
}

/// Loss of one sequence (mean over labeled steps and both outputs) and its
/// gradient scaled by `weight`, accumulated into `grad`.
fn sequence_loss_and_grad<T: Scalar>(
    params: &[T],
    layout: &LstmLayout,
    seq: &SeqRows<T>,
    weight: T,
    grad: &mut [T],
    tape: &mut Tape<T>,
) -> T {
    let steps = seq.len();
    let labeled = seq.labeled();
    if labeled == 0 {
        return T::zero();
    }
    forward_tape(params, layout, seq, tape);

    let nl = layout.hidden.len();
    let top = layout.top();
    let scale = T::one() / T::of_usize(labeled * OUTPUTS);
    let two = T::of(2.0);
    let mut loss = T::zero();

    // Gradients flowing backwards in time, per layer.
    let mut dh_next: Vec<Vec<T>> = layout.hidden.iter().map(|&h| vec![T::zero(); h]).collect();
    let mut dc_next: Vec<Vec<T>> = layout.hidden.iter().map(|&h| vec![T::zero(); h]).collect();
    let mut dh_top = vec![T::zero(); top];
    let mut h_buf = vec![T::zero(); top];
    let max_h = layout.hidden.iter().copied().max().unwrap_or(0);
    let mut dz = vec![T::zero(); 4 * max_h];
    let mut dxh = vec![T::zero(); layout.input.max(max_h) + max_h];
    let mut dx_from_above: Vec<T> = vec![T::zero(); max_h];

    for t in (0..steps).rev() {
        // Read-out.
        dh_top.iter_mut().for_each(|v| *v = T::zero());
        if let Some(y) = seq.y[t] {
            tape_h(tape, layout, nl - 1, t, &mut h_buf);
            for o in 0..OUTPUTS {
                let e = tape.out[t][o] - y[o];
                loss += e * e;
                let d = two * e * scale * weight;
                let w = layout.out_w + o * top;
                axpy(d, &h_buf, &mut grad[w..w + top]);
                grad[layout.out_b + o] += d;
                axpy(d, &params[w..w + top], &mut dh_top);
            }
        }

        for l in (0..nl).rev() {
            let hsz = layout.hidden[l];
            let n_x = layout.layer_input(l);
            let n_in = n_x + hsz;
            let (wo, bo) = layout.layers[l];
            let g = &tape.gates[l][t * 4 * hsz..(t + 1) * 4 * hsz];
            let tc = &tape.tanh_c[l][t * hsz..(t + 1) * hsz];
            let c_prev = |j: usize| {
                if t == 0 {
                    T::zero()
                } else {
                    tape.c[l][(t - 1) * hsz + j]
                }
            };
            let one = T::one();
            for j in 0..hsz {
                let dh = dh_next[l][j] + if l == nl - 1 { dh_top[j] } else { dx_from_above[j] };
                let (i, f, gg, o) = (g[j], g[hsz + j], g[2 * hsz + j], g[3 * hsz + j]);
                let dc = dh * o * (one - tc[j] * tc[j]) + dc_next[l][j];
                let d_o = dh * tc[j];
                let d_i = dc * gg;
                let d_g = dc * i;
                let d_f = dc * c_prev(j);
                dc_next[l][j] = dc * f;
                dz[j] = d_i * i * (one - i);
                dz[hsz + j] = d_f * f * (one - f);
                dz[2 * hsz + j] = d_g * (one - gg * gg);
                dz[3 * hsz + j] = d_o * o * (one - o);
            }
            let xh = &tape.xh[l][t * n_in..(t + 1) * n_in];
            let dxh = &mut dxh[..n_in];
            dxh.iter_mut().for_each(|v| *v = T::zero());
            for r in 0..4 * hsz {
                let d = dz[r];
                let row = wo + r * n_in;
                axpy(d, xh, &mut grad[row..row + n_in]);
                grad[bo + r] += d;
                axpy(d, &params[row..row + n_in], dxh);
            }
            dh_next[l].copy_from_slice(&dxh[n_x..]);
            if l > 0 {
                dx_from_above[..n_x].copy_from_slice(&dxh[..n_x]);
            }
        }
    }
    loss * scale
}

/// Loss of one sequence without gradients.
pub fn sequence_loss<T: Scalar>(params: &[T], layout: &LstmLayout, seq: &SeqRows<T>) -> T {
    let mut state = LstmState::zeros(layout);
    let mut loss = T::zero();
    for (t, y) in seq.y.iter().enumerate() {
        let out = step(params, layout, &mut state, &seq.x[t * seq.dim..(t + 1) * seq.dim]);
        if let Some(y) = y {
            for o in 0..OUTPUTS {
                let e = out[o] - y[o];
                loss += e * e;
            }
        }
    }
    loss / T::of_usize(seq.labeled().max(1) * OUTPUTS)
}

/// Mean loss over `batch` sequences and its gradient (overwrites `grad`).
pub fn loss_and_grad<T: Scalar>(
    params: &[T],
    layout: &LstmLayout,
    batch: &[&SeqRows<T>],
    grad: &mut [T],
) -> T {
    grad.iter_mut().for_each(|g| *g = T::zero());
    let weight = T::one() / T::of_usize(batch.len().max(1));
    let longest = batch.iter().map(|s| s.len()).max().unwrap_or(0);
    let mut tape = Tape::new(layout, longest);
    let mut loss = T::zero();
    for seq in batch {
        loss += sequence_loss_and_grad(params, layout, seq, weight, grad, &mut tape);
    }
    loss * weight
}

/// Trains on whole sequences; the recurrent state starts from zero at the
/// beginning of every sequence. Sequences without any label are skipped.
pub fn train_lstm<T: Scalar>(
    sequences: &[&[AlignedSample<T>]],
    spec: &ModelSpec,
    cfg: &TrainConfig,
) -> Result<ModelState<T>> {
    if spec.kind != ModelKind::Lstm {
        return Err(ModelError::Validation(format!("train_lstm given a {} spec", spec.kind)));
    }
    spec.validate()?;
    cfg.validate()?;
    let labeled: Vec<&[AlignedSample<T>]> = sequences
        .iter()
        .copied()
        .filter(|s| {
            let ok = s.iter().any(|a| a.y.is_some());
            if !ok {
                log::warn!("skipping an unlabeled sequence of {} steps", s.len());
            }
            ok
        })
        .collect();
    if labeled.is_empty() {
        return Err(ModelError::Validation("no labeled sequence to train on".into()));
    }
    let norm = fit_norm(labeled.iter().flat_map(|s| s.iter()), spec.features)?;
    let data: Vec<SeqRows<T>> = labeled
        .iter()
        .map(|s| sequence_rows(s, spec.features, &norm))
        .collect::<Result<_>>()?;

    let layout = LstmLayout::from_spec(spec);
    let mut params = init_params::<T>(&layout, cfg.seed);
    let mut grad = vec![T::zero(); params.len()];
    let mut opt = OptimizerState::new(cfg.optimizer, params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x15_7A7E);
    let batch = cfg.batch.unwrap_or(1).min(data.len());
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = T::zero();
        for chunk in order.chunks(batch) {
            let seqs: Vec<&SeqRows<T>> = chunk.iter().map(|&i| &data[i]).collect();
            let loss = loss_and_grad(&params, &layout, &seqs, &mut grad);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(ModelError::Diverged {
                    epoch,
                    message: format!("loss became {loss}"),
                });
            }
            epoch_loss += loss;
            opt.apply(&mut params, &grad);
        }
        log::debug!(
            "lstm epoch {epoch}: mean loss {}",
            epoch_loss / T::of_usize(order.chunks(batch).len())
        );
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_matches_closed_form_count() {
        let l = LstmLayout::new(10, &[32, 32]);
        assert_eq!(l.param_count(), 13_890);
        assert_eq!(l.layers[1].0, 5_504);
        assert_eq!(l.out_w, 5_504 + 8_320);
    }

    #[test]
    fn zero_weights_and_input_keep_zero_state() {
        let layout = LstmLayout::new(10, &[32, 32]);
        let params = vec![0.0f64; layout.param_count()];
        let mut state = LstmState::zeros(&layout);
        let y = step(&params, &layout, &mut state, &[0.0; 10]);
        assert_eq!(y, [0.0, 0.0]);
        // With zero biases i = f = o = 0.5 and g = 0, so c and h stay zero.
        assert!(state.h.iter().chain(&state.c).flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn forget_bias_is_initialized() {
        let layout = LstmLayout::new(3, &[4]);
        let p = init_params::<f64>(&layout, 1);
        let (_, b) = layout.layers[0];
        assert_eq!(&p[b..b + 4], &[0.0; 4]);
        assert_eq!(&p[b + 4..b + 8], &[1.0; 4]);
        assert_eq!(&p[b + 8..b + 16], &[0.0; 8]);
    }

    #[test]
    fn tape_forward_matches_stepping() {
        let layout = LstmLayout::new(3, &[5, 4]);
        let params = init_params::<f64>(&layout, 9);
        let seq = SeqRows {
            dim: 3,
            x: (0..30).map(|i| ((i * 7) % 11) as f64 / 5.0 - 1.0).collect(),
            y: vec![Some([0.1, 0.2]); 10],
        };
        let mut tape = Tape::new(&layout, 10);
        forward_tape(&params, &layout, &seq, &mut tape);
        let mut st = LstmState::zeros(&layout);
        for t in 0..10 {
            let y = step(&params, &layout, &mut st, &seq.x[t * 3..(t + 1) * 3]);
            assert_eq!(y, tape.out[t]);
        }
    }
}
