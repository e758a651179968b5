//! AdamW with decoupled, multiplicative weight decay.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

/// First and second moments for one tensor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    pub fn zeros(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// One AdamW step on a flat tensor. `t` is the 1-based step count after
/// this update. Decay, when enabled, is applied as `p *= 1 - lr * wd`
/// before the moment step.
pub fn adamw_update(
    params: &mut [f64],
    grads: &[f64],
    state: &mut Moments,
    t: u64,
    lr: f64,
    hyper: &AdamWHyper,
    decay: bool,
) {
    debug_assert_eq!(params.len(), grads.len());
    let bc1 = 1.0 - hyper.beta1.powi(t as i32);
    let bc2 = 1.0 - hyper.beta2.powi(t as i32);
    let shrink = if decay { 1.0 - lr * hyper.weight_decay } else { 1.0 };
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *p *= shrink;
        *m = hyper.beta1 * *m + (1.0 - hyper.beta1) * g;
        *v = hyper.beta2 * *v + (1.0 - hyper.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + hyper.eps);
    }
}
