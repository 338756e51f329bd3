//! Dense multilayer perceptrons with rectifier hidden activations.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::kernels;
use crate::nn::tape::{NodeId, Tape, Tensor};

/// Output activation of the final layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputHead {
    /// Raw linear output.
    Identity,
    /// Sigmoid squashing to [0, 1].
    Unit,
}

/// A fully connected network. `widths` includes the input and output sizes,
/// e.g. `[19, 256, 256, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNetwork {
    pub widths: Vec<usize>,
    /// One (fan_in × fan_out) weight matrix per layer.
    pub weights: Vec<Tensor>,
    /// One (1 × fan_out) bias row per layer.
    pub biases: Vec<Tensor>,
    pub head: OutputHead,
}

impl MlpNetwork {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng>(widths: &[usize], head: OutputHead, rng: &mut R) -> Self {
        assert!(widths.len() >= 2, "network needs at least input and output widths");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data: Vec<f64> =
                (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
            weights.push(Tensor::new(fan_in, fan_out, data));
            biases.push(Tensor::zeros(1, fan_out));
        }
        Self { widths: widths.to_vec(), weights, biases, head }
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Tensor::len).sum::<usize>()
            + self.biases.iter().map(Tensor::len).sum::<usize>()
    }

    /// Parameter tensors in canonical order: w0, b0, w1, b1, ...
    pub fn params(&self) -> Vec<&Tensor> {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w);
            out.push(b);
        }
        out
    }

    /// Flat copy of all parameters in canonical order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.params().iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    /// Overwrites all parameters from a flat vector in canonical order.
    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Schema(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for t in self.params_mut() {
            let n = t.len();
            t.data.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Registers the parameters on a tape.
    pub fn leaf_on(&self, tape: &mut Tape, requires_grad: bool) -> MlpHandle {
        let mut layer_w = Vec::new();
        let mut layer_b = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            layer_w.push(tape.leaf(w.clone(), requires_grad));
            layer_b.push(tape.leaf(b.clone(), requires_grad));
        }
        MlpHandle { layer_w, layer_b, head: self.head }
    }

    /// Tape-free forward pass for frozen-network inference. `input` is a
    /// row-major (rows × input_width) batch.
    pub fn infer(&self, input: &[f64], rows: usize) -> Vec<f64> {
        assert_eq!(input.len(), rows * self.input_width(), "infer input shape mismatch");
        let mut cur = input.to_vec();
        let n_layers = self.weights.len();
        for (li, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let (fan_in, fan_out) = w.shape();
            let mut next = vec![0.0; rows * fan_out];
            for r in 0..rows {
                for i in 0..fan_in {
                    let x = cur[r * fan_in + i];
                    if x == 0.0 {
                        continue;
                    }
                    let wrow = &w.data[i * fan_out..(i + 1) * fan_out];
                    let orow = &mut next[r * fan_out..(r + 1) * fan_out];
                    for j in 0..fan_out {
                        orow[j] += x * wrow[j];
                    }
                }
                for j in 0..fan_out {
                    next[r * fan_out + j] += b.data[j];
                }
            }
            let last = li == n_layers - 1;
            if !last {
                for v in next.iter_mut() {
                    *v = v.max(0.0);
                }
            } else if self.head == OutputHead::Unit {
                for v in next.iter_mut() {
                    *v = kernels::sigmoid(*v);
                }
            }
            cur = next;
        }
        cur
    }

    /// Single-row convenience wrapper around [`MlpNetwork::infer`].
    pub fn infer_one(&self, input: &[f64]) -> Vec<f64> {
        self.infer(input, 1)
    }
}

/// Tape-registered parameters of one network.
pub struct MlpHandle {
    pub layer_w: Vec<NodeId>,
    pub layer_b: Vec<NodeId>,
    head: OutputHead,
}

impl MlpHandle {
    pub fn forward(&self, tape: &mut Tape, input: NodeId) -> NodeId {
        let mut cur = input;
        let n_layers = self.layer_w.len();
        for (li, (w, b)) in self.layer_w.iter().zip(&self.layer_b).enumerate() {
            let lin = tape.matmul(cur, *w);
            cur = tape.add_row(lin, *b);
            if li < n_layers - 1 {
                cur = tape.relu(cur);
            } else if self.head == OutputHead::Unit {
                cur = tape.sigmoid(cur);
            }
        }
        cur
    }

    /// Parameter node ids in canonical order: w0, b0, w1, b1, ...
    pub fn param_ids(&self) -> Vec<NodeId> {
        self.layer_w.iter().zip(&self.layer_b).flat_map(|(w, b)| [*w, *b]).collect()
    }
}
