//! Bias-corrected Adam.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tape::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step_count: u64,
    /// First-moment accumulators, one flat vector per parameter tensor.
    pub m: Vec<Vec<f64>>,
    /// Second-moment accumulators.
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(learning_rate: f64, param_sizes: &[usize]) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            m: param_sizes.iter().map(|n| vec![0.0; *n]).collect(),
            v: param_sizes.iter().map(|n| vec![0.0; *n]).collect(),
        }
    }

    pub fn for_params(learning_rate: f64, params: &[&Tensor]) -> Self {
        let sizes: Vec<usize> = params.iter().map(|t| t.len()).collect();
        Self::new(learning_rate, &sizes)
    }
}

/// One Adam update over a parameter group. `params` and `grads` must align
/// with the state's accumulators. Nonfinite gradients abort loudly.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Schema(format!(
            "adam group mismatch: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for g in grads {
        if g.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Training("nonfinite gradient passed to optimizer".into()));
        }
    }
    state.step_count += 1;
    let t = state.step_count as f64;
    let bc1 = 1.0 - state.beta1.powf(t);
    let bc2 = 1.0 - state.beta2.powf(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        if p.len() != g.len() || p.len() != m.len() {
            return Err(Error::Schema("adam parameter/gradient shape mismatch".into()));
        }
        for i in 0..p.data.len() {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g.data[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g.data[i] * g.data[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p.data[i] -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}
