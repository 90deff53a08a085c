//! First-order optimizers over a flat parameter vector.

use handstate_core::model_state::Optimizer;
use handstate_core::Scalar;

#[derive(Clone, Debug)]
pub struct OptimizerState<T: Scalar> {
    kind: Optimizer,
    m: Vec<T>,
    v: Vec<T>,
    step: i32,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(kind: Optimizer, n: usize) -> Self {
        let moments = matches!(kind, Optimizer::Adam { .. });
        Self {
            kind,
            m: if moments { vec![T::zero(); n] } else { Vec::new() },
            v: if moments { vec![T::zero(); n] } else { Vec::new() },
            step: 0,
        }
    }

    /// Applies one update `params -= step(grad)`.
    pub fn apply(&mut self, params: &mut [T], grad: &[T]) {
        debug_assert_eq!(params.len(), grad.len());
        self.step += 1;
        match self.kind {
            Optimizer::Sgd { lr } => {
                let lr = T::of(lr);
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * *g;
                }
            }
            Optimizer::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                let (b1, b2) = (T::of(beta1), T::of(beta2));
                let one = T::one();
                // Bias corrections folded into the step size.
                let c1 = one - b1.powi(self.step);
                let c2 = one - b2.powi(self.step);
                let alpha = T::of(lr) * c2.sqrt() / c1;
                let eps_hat = T::of(eps) * c2.sqrt();
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grad)
                    .zip(self.m.iter_mut())
                    .zip(self.v.iter_mut())
                {
                    *m = b1 * *m + (one - b1) * *g;
                    *v = b2 * *v + (one - b2) * *g * *g;
                    *p -= alpha * *m / (v.sqrt() + eps_hat);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_moves_by_lr() {
        // With bias correction the first Adam step has magnitude ~lr.
        let mut s = OptimizerState::<f64>::new(Optimizer::adam(0.01), 2);
        let mut p = vec![1.0, -1.0];
        s.apply(&mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.99).abs() < 1e-6);
        assert!((p[1] + 0.99).abs() < 1e-6);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut s = OptimizerState::<f64>::new(Optimizer::adam(0.05), 1);
        let mut p = vec![5.0];
        for _ in 0..2000 {
            let g = [2.0 * (p[0] - 1.5)];
            s.apply(&mut p, &g);
        }
        assert!((p[0] - 1.5).abs() < 1e-3);
    }

    #[test]
    fn sgd_step() {
        let mut s = OptimizerState::<f32>::new(Optimizer::Sgd { lr: 0.5 }, 1);
        let mut p = vec![1.0f32];
        s.apply(&mut p, &[1.0]);
        assert_eq!(p[0], 0.5);
    }
}
