//! Bias-corrected Adam parameter updates.

use serde::{Deserialize, Serialize};

use super::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First/second moment buffers, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn for_params(params: &[Tensor]) -> AdamState {
        AdamState {
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            step: 0,
        }
    }
}

/// One optimizer step. `grads[i]` must align with `params[i]`; a `None`
/// gradient leaves that parameter untouched.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Option<&[f64]>],
    state: &mut AdamState,
    opts: &AdamParams,
) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - opts.beta1.powi(t);
    let bc2 = 1.0 - opts.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let Some(g) = grads[i] else { continue };
        debug_assert_eq!(g.len(), p.numel());
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        for e in 0..g.len() {
            m[e] = opts.beta1 * m[e] + (1.0 - opts.beta1) * g[e];
            v[e] = opts.beta2 * v[e] + (1.0 - opts.beta2) * g[e] * g[e];
            let m_hat = m[e] / bc1;
            let v_hat = v[e] / bc2;
            p.data[e] -= opts.learning_rate * m_hat / (v_hat.sqrt() + opts.epsilon);
        }
    }
}
