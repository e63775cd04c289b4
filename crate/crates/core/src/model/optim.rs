use crate::scalar::{lit, Scalar};

use super::OptimizerKind;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam and Nesterov-accelerated Adam with bias-corrected moments.
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    learning_rate: f64,
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, learning_rate: f64, n_params: usize) -> Self {
        Self {
            kind,
            learning_rate,
            m: vec![T::zero(); n_params],
            v: vec![T::zero(); n_params],
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut [T], grads: &[T]) {
        self.t += 1;
        let b1 = lit::<T>(BETA1);
        let b2 = lit::<T>(BETA2);
        let eps = lit::<T>(EPSILON);
        let lr = lit::<T>(self.learning_rate);
        let c1 = T::one() - b1.powi(self.t);
        let c2 = T::one() - b2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (T::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (T::one() - b2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            let num = match self.kind {
                OptimizerKind::Adam => m_hat,
                OptimizerKind::Nadam => b1 * m_hat + (T::one() - b1) * g / c1,
            };
            params[i] = params[i] - lr * num / (v_hat.sqrt() + eps);
        }
    }
}
