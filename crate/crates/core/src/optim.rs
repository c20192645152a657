//! Adam with bias correction, used by both trainers.

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    /// One descent step on `params` (minimises whatever `grad` is the gradient of).
    pub fn step<T: Real>(&mut self, params: &mut [T], grad: &[T], lr: f64) {
        self.step_decayed(params, grad, lr, 0.0);
    }

    /// Adam step with decoupled weight decay: `p -= lr * (adam + decay * p)`.
    pub fn step_decayed<T: Real>(&mut self, params: &mut [T], grad: &[T], lr: f64, decay: f64) {
        debug_assert_eq!(params.len(), grad.len());
        debug_assert_eq!(params.len(), self.m.len());
        self.step += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grad[i].to_f64_lossy();
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            let p = params[i].to_f64_lossy();
            params[i] = T::lit(p - lr * (m_hat / (v_hat.sqrt() + ADAM_EPS) + decay * p));
        }
    }
}

/// Cosine annealing from `lr` at step 0 to `lr_min` at `total`.
pub fn cosine_lr(lr: f64, lr_min: f64, step: usize, total: usize) -> f64 {
    if total <= 1 {
        return lr;
    }
    let frac = (step as f64 / (total - 1) as f64).min(1.0);
    lr_min + 0.5 * (lr - lr_min) * (1.0 + (std::f64::consts::PI * frac).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = AdamState::new(2);
        let mut p = vec![1.0f64, -1.0];
        s.step(&mut p, &[3.0, -0.5], 0.1);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(1e-2, 1e-6, 0, 100), 1e-2);
        assert!((cosine_lr(1e-2, 1e-6, 99, 100) - 1e-6).abs() < 1e-15);
        let mid = cosine_lr(1.0, 0.0, 50, 101);
        assert!((mid - 0.5).abs() < 1e-12);
    }
}
