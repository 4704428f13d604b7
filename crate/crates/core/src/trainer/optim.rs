use serde::{Deserialize, Serialize};

use crate::policy::{ParamGrad, ScorerParams};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moments for `(w, b)` and the number of applied updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub m: ParamGrad,
    pub v: ParamGrad,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(dim: usize) -> Self {
        Self {
            m: ParamGrad::zeros(dim),
            v: ParamGrad::zeros(dim),
            t: 0,
        }
    }

    /// One AdamW update with decoupled weight decay on every parameter,
    /// bias included.
    pub fn step(&mut self, params: &mut ScorerParams, grad: &ParamGrad, lr: f64, weight_decay: f64) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t as i32);
        let c2 = 1.0 - BETA2.powi(self.t as i32);
        let update = |theta: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *theta -= lr * weight_decay * *theta;
            *theta -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        };
        for k in 0..params.weights.len() {
            update(
                &mut params.weights[k],
                grad.weights[k],
                &mut self.m.weights[k],
                &mut self.v.weights[k],
            );
        }
        update(&mut params.bias, grad.bias, &mut self.m.bias, &mut self.v.bias);
    }
}
