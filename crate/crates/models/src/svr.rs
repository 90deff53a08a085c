//! Epsilon-insensitive support vector regression with an RBF kernel, one
//! independent machine per target, solved by SMO with second-order working
//! set selection.
//!
//! Parameter layout, per target: the bias, the dual coefficients
//! `alpha - alpha*` of the kept support vectors, then the support vectors
//! themselves (normalized, row-major).

use handstate_core::model_state::{ModelKind, ModelSpec, ModelState, SvrSpec, OUTPUTS};
use handstate_core::types::AlignedSample;
use handstate_core::Scalar;

use crate::data::{fit_norm, labeled_rows, Rows};
use crate::error::{ModelError, Result};

pub const DEFAULT_C: f64 = 1.0;
pub const DEFAULT_EPSILON: f64 = 0.1;
pub const DEFAULT_TOL: f64 = 1e-3;
/// Upper bound on SMO pair updates per machine.
pub const MAX_ITERATIONS: usize = 100_000;
/// Kernel-row cache budget in bytes.
const CACHE_BYTES: usize = 256 << 20;
const TAU: f64 = 1e-12;

/// Hyperparameters shared by both per-target machines.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SvrParams {
    pub c: f64,
    pub epsilon: f64,
    /// `None` picks `1 / (d * Var(X))` over the normalized training matrix.
    pub gamma: Option<f64>,
    pub tol: f64,
    pub max_iterations: usize,
}

impl Default for SvrParams {
    fn default() -> Self {
        Self {
            c: DEFAULT_C,
            epsilon: DEFAULT_EPSILON,
            gamma: None,
            tol: DEFAULT_TOL,
            max_iterations: MAX_ITERATIONS,
        }
    }
}

/// `1 / (d * Var(X))` over every entry of `x`; 1 when the matrix is constant.
pub fn scale_gamma(x: &[f64], dim: usize) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var > 0.0 {
        1.0 / (dim as f64 * var)
    } else {
        1.0
    }
}

fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

/// LRU cache of kernel rows keyed by sample index.
struct KernelCache<'a> {
    x: &'a [f64],
    dim: usize,
    n: usize,
    gamma: f64,
    rows: Vec<Option<Vec<f64>>>,
    stamp: Vec<u64>,
    resident: Vec<usize>,
    capacity: usize,
    clock: u64,
}

impl<'a> KernelCache<'a> {
    fn new(x: &'a [f64], dim: usize, gamma: f64) -> Self {
        let n = x.len() / dim;
        let capacity = (CACHE_BYTES / (8 * n.max(1))).clamp(2, n.max(2));
        Self {
            x,
            dim,
            n,
            gamma,
            rows: vec![None; n],
            stamp: vec![0; n],
            resident: Vec::new(),
            capacity,
            clock: 0,
        }
    }

    fn point(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    fn ensure(&mut self, i: usize) {
        self.clock += 1;
        self.stamp[i] = self.clock;
        if self.rows[i].is_some() {
            return;
        }
        if self.resident.len() >= self.capacity {
            let (pos, _) = self
                .resident
                .iter()
                .enumerate()
                .filter(|(_, &r)| r != i)
                .min_by_key(|(_, &r)| self.stamp[r])
                .expect("cache holds at least two rows");
            let victim = self.resident.swap_remove(pos);
            self.rows[victim] = None;
        }
        let xi = self.point(i);
        let row: Vec<f64> = (0..self.n).map(|j| rbf(xi, self.point(j), self.gamma)).collect();
        self.rows[i] = Some(row);
        self.resident.push(i);
    }

    /// Rows `i` and `j`, computing them if needed.
    fn pair(&mut self, i: usize, j: usize) -> (&[f64], &[f64]) {
        self.ensure(i);
        self.ensure(j);
        (
            self.rows[i].as_deref().expect("resident"),
            self.rows[j].as_deref().expect("resident"),
        )
    }

    fn row(&mut self, i: usize) -> &[f64] {
        self.ensure(i);
        self.rows[i].as_deref().expect("resident")
    }
}

/// Dual solution of one machine.
#[derive(Clone, Debug)]
pub struct SvrSolution {
    /// `alpha` for the first `n` entries, `alpha*` for the rest.
    pub alpha: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
}

impl SvrSolution {
    pub fn coefficients(&self) -> Vec<f64> {
        let n = self.alpha.len() / 2;
        (0..n).map(|i| self.alpha[i] - self.alpha[i + n]).collect()
    }
}

/// Solves the epsilon-SVR dual
/// `min 1/2 (a - a*)' K (a - a*) + eps sum(a + a*) - z'(a - a*)`
/// subject to `sum(a - a*) = 0`, `0 <= a, a* <= C`.
pub fn solve(x: &[f64], dim: usize, z: &[f64], params: &SvrParams, gamma: f64) -> Result<SvrSolution> {
    let n = z.len();
    let l = 2 * n;
    let c = params.c;
    let sign = |t: usize| if t < n { 1.0 } else { -1.0 };
    let mut alpha = vec![0.0; l];
    // Gradient of the dual objective; alpha = 0 initially.
    let mut grad: Vec<f64> = (0..l)
        .map(|t| if t < n { params.epsilon - z[t] } else { params.epsilon + z[t - n] })
        .collect();
    let mut cache = KernelCache::new(x, dim, gamma);
    let is_upper = |a: f64| a >= c;
    let is_lower = |a: f64| a <= 0.0;

    let mut iterations = 0;
    loop {
        // First index: maximal violation.
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..l {
            let v = if sign(t) > 0.0 {
                (!is_upper(alpha[t])).then(|| -grad[t])
            } else {
                (!is_lower(alpha[t])).then(|| grad[t])
            };
            if let Some(v) = v {
                if v >= gmax {
                    gmax = v;
                    i_sel = Some(t);
                }
            }
        }
        let Some(i) = i_sel else { break };
        let yi = sign(i);
        let qi_row = cache.row(i % n).to_vec();
        let qd = 1.0; // RBF diagonal
        let mut gmax2 = f64::NEG_INFINITY;
        let mut best = f64::INFINITY;
        let mut j_sel = None;
        for t in 0..l {
            let yt = sign(t);
            let k = qi_row[t % n];
            if yt > 0.0 {
                if is_lower(alpha[t]) {
                    continue;
                }
                let diff = gmax + grad[t];
                gmax2 = gmax2.max(grad[t]);
                if diff > 0.0 {
                    let mut quad = qd + qd - 2.0 * yi * k;
                    if quad <= 0.0 {
                        quad = TAU;
                    }
                    let obj = -(diff * diff) / quad;
                    if obj <= best {
                        best = obj;
                        j_sel = Some(t);
                    }
                }
            } else {
                if is_upper(alpha[t]) {
                    continue;
                }
                let diff = gmax - grad[t];
                gmax2 = gmax2.max(-grad[t]);
                if diff > 0.0 {
                    let mut quad = qd + qd + 2.0 * yi * k;
                    if quad <= 0.0 {
                        quad = TAU;
                    }
                    let obj = -(diff * diff) / quad;
                    if obj <= best {
                        best = obj;
                        j_sel = Some(t);
                    }
                }
            }
        }
        let gap = gmax + gmax2;
        let Some(j) = j_sel.filter(|_| gap >= params.tol) else {
            break;
        };
        if iterations >= params.max_iterations {
            return Err(ModelError::NotConverged { iterations, gap });
        }
        iterations += 1;

        let yj = sign(j);
        let (ki, kj) = cache.pair(i % n, j % n);
        let kij = ki[j % n];
        let (old_i, old_j) = (alpha[i], alpha[j]);
        if yi != yj {
            let quad = (2.0 + 2.0 * kij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (2.0 - 2.0 * kij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let di = alpha[i] - old_i;
        let dj = alpha[j] - old_j;
        // Q[i][t] = y_i y_t K(i, t)
        for t in 0..l {
            let yt = sign(t);
            grad[t] += yt * (yi * ki[t % n] * di + yj * kj[t % n] * dj);
        }
    }

    // Bias from free variables, else the midpoint of the feasible interval.
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum_free, mut n_free) = (0.0, 0usize);
    for t in 0..l {
        let yt = sign(t);
        let yg = yt * grad[t];
        if is_upper(alpha[t]) {
            if yt < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if is_lower(alpha[t]) {
            if yt > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 {
        sum_free / n_free as f64
    } else {
        (ub + lb) / 2.0
    };
    Ok(SvrSolution {
        alpha,
        bias: -rho,
        iterations,
    })
}

/// Decision value of one machine stored in `block` (bias, coefficients,
/// support vectors) for the normalized input `z`.
pub(crate) fn decision<T: Scalar>(block: &[T], n_sv: usize, dim: usize, gamma: f64, z: &[T]) -> f64 {
    let coefs = &block[1..1 + n_sv];
    let svs = &block[1 + n_sv..1 + n_sv + n_sv * dim];
    let mut acc = block[0].as_f64();
    for (k, a) in coefs.iter().enumerate() {
        let sv = &svs[k * dim..(k + 1) * dim];
        let d2: f64 = sv
            .iter()
            .zip(z)
            .map(|(s, v)| {
                let d = s.as_f64() - v.as_f64();
                d * d
            })
            .sum();
        acc += a.as_f64() * (-gamma * d2).exp();
    }
    acc
}

pub fn train_svr<T: Scalar>(samples: &[AlignedSample<T>], spec: &ModelSpec, params: &SvrParams) -> Result<ModelState<T>> {
    if spec.kind != ModelKind::Svr {
        return Err(ModelError::Validation(format!("train_svr given a {} spec", spec.kind)));
    }
    let mut spec = spec.clone();
    spec.svr.get_or_insert(SvrSpec {
        c: params.c,
        epsilon: params.epsilon,
        gamma: 1.0,
        tol: params.tol,
        n_support: [0; OUTPUTS],
    });
    spec.validate()?;
    let norm = fit_norm(samples, spec.features)?;
    let rows: Rows<T> = labeled_rows(samples, spec.features, &norm)?;
    if rows.is_empty() {
        return Err(ModelError::Validation("no labeled samples to train on".into()));
    }
    let dim = rows.dim;
    let x: Vec<f64> = rows.x.iter().map(|v| v.as_f64()).collect();
    let gamma = params.gamma.unwrap_or_else(|| scale_gamma(&x, dim));

    let mut out = Vec::new();
    let mut n_support = [0usize; OUTPUTS];
    for (o, count) in n_support.iter_mut().enumerate() {
        let z: Vec<f64> = (0..rows.len()).map(|i| rows.target(i)[o].as_f64()).collect();
        let sol = solve(&x, dim, &z, params, gamma)?;
        log::debug!("svr target {o}: {} SMO iterations", sol.iterations);
        let coefs = sol.coefficients();
        let kept: Vec<usize> = (0..coefs.len()).filter(|&i| coefs[i] != 0.0).collect();
        *count = kept.len();
        out.push(T::of(sol.bias));
        out.extend(kept.iter().map(|&i| T::of(coefs[i])));
        for &i in &kept {
            out.extend_from_slice(rows.row(i));
        }
    }

    spec.svr = Some(SvrSpec {
        c: params.c,
        epsilon: params.epsilon,
        gamma,
        tol: params.tol,
        n_support,
    });
    spec.train = None;
    let state = ModelState {
        spec,
        norm,
        params: out,
        seed: 0,
    };
    state.validate()?;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(n: usize, dim: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let z: Vec<f64> = (0..n)
            .map(|i| x[i * dim].sin() + 0.5 * x[i * dim + 1] + rng.gen_range(-0.3..0.3))
            .collect();
        (x, z)
    }

    #[test]
    fn dual_solution_satisfies_kkt() {
        let (n, dim) = (50, 3);
        let (x, z) = random_problem(n, dim, 11);
        let p = SvrParams::default();
        let gamma = scale_gamma(&x, dim);
        let sol = solve(&x, dim, &z, &p, gamma).unwrap();
        let beta = sol.coefficients();
        assert!(sol.alpha.iter().all(|a| (0.0..=p.c).contains(a)));
        assert!(beta.iter().sum::<f64>().abs() < 1e-10);
        // Both of a pair are never positive together.
        assert!((0..n).all(|i| sol.alpha[i] == 0.0 || sol.alpha[i + n] == 0.0));
        // Complementary slackness: residual r = z - f.
        let tol = 1e-2;
        for i in 0..n {
            let f: f64 = (0..n)
                .map(|k| beta[k] * rbf(&x[k * dim..(k + 1) * dim], &x[i * dim..(i + 1) * dim], gamma))
                .sum::<f64>()
                + sol.bias;
            let r = z[i] - f;
            let (a, s) = (sol.alpha[i], sol.alpha[i + n]);
            if a == 0.0 && s == 0.0 {
                assert!(r.abs() <= p.epsilon + tol, "inside tube violated at {i}: {r}");
            } else if a > 0.0 && a < p.c {
                assert!((r - p.epsilon).abs() <= tol, "free alpha at {i}: {r}");
            } else if s > 0.0 && s < p.c {
                assert!((r + p.epsilon).abs() <= tol, "free alpha* at {i}: {r}");
            } else if a >= p.c {
                assert!(r >= p.epsilon - tol);
            } else {
                assert!(r <= -p.epsilon + tol);
            }
        }
    }

    #[test]
    fn constant_target_needs_no_support_vectors() {
        let (x, _) = random_problem(40, 2, 3);
        let z = vec![0.7; 40];
        let sol = solve(&x, 2, &z, &SvrParams::default(), 0.5).unwrap();
        assert!(sol.alpha.iter().all(|a| *a == 0.0));
        assert!((sol.bias - 0.7).abs() < 1e-12);
    }

    #[test]
    fn gamma_defaults_to_inverse_dim_times_variance() {
        let x = [0.0, 2.0, 0.0, 2.0];
        assert_eq!(scale_gamma(&x, 2), 0.5);
        assert_eq!(scale_gamma(&[3.0; 4], 2), 1.0);
    }
}
