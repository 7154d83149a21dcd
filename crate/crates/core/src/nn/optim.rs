//! Plain stochastic gradient descent and a step-decay learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::layers::Module;

/// `lr0 · factor^⌊step / every⌋`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepDecay {
    pub initial: f64,
    pub factor: f64,
    pub every: usize,
}

impl StepDecay {
    pub fn new(initial: f64, factor: f64, every: usize) -> Self {
        Self { initial, factor, every }
    }

    pub fn at(&self, step: usize) -> f64 {
        let k = step.checked_div(self.every).unwrap_or(0);
        self.initial * self.factor.powi(k as i32)
    }
}

/// `θ ← θ − lr · ∇θ` for every trainable buffer.
pub fn sgd_step<M: Module + ?Sized>(module: &mut M, lr: f64) {
    for p in module.params_mut() {
        if p.is_trainable() {
            for (v, g) in p.value.iter_mut().zip(&p.grad) {
                *v -= lr * g;
            }
        }
    }
}

/// Sum of squared gradients over trainable buffers.
pub fn grad_norm_sq<M: Module + ?Sized>(module: &M) -> f64 {
    module
        .params()
        .iter()
        .flat_map(|p| p.grad.iter())
        .map(|g| g * g)
        .sum()
}
