//! Minimal reverse-mode automatic differentiation over dense `f64` matrices,
//! multilayer perceptrons, and the Adam optimizer.
//!
//! Everything is double precision and single-threaded per tape; independent
//! tapes may run concurrently. Parameters are copied, not shared, across
//! concurrent readers during evaluation.

mod adam;
mod blob;
mod kernels;
mod mlp;
mod tape;

pub use adam::{adam_step, AdamState};
pub use blob::{decode_f64s, encode_f64s};
pub use kernels::{logsumexp_slice, softmax_slice};
pub use mlp::{MlpHandle, MlpNetwork, OutputHead};
pub use tape::{Gradients, NodeId, Tape, Tensor};

/// Central finite-difference gradient of a scalar function of a flat
/// parameter vector. Used by the gradient-check tests as the independent
/// oracle against tape backpropagation.
pub fn central_diff<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], eps: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let up = f(&probe);
        probe[i] = orig - eps;
        let down = f(&probe);
        probe[i] = orig;
        grad[i] = (up - down) / (2.0 * eps);
    }
    grad
}

/// Relative error between two gradient vectors, guarding tiny denominators.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| {
            let denom = a.abs().max(n.abs());
            if denom < 1e-8 {
                0.0
            } else {
                (a - n).abs() / denom
            }
        })
        .fold(0.0, f64::max)
}
