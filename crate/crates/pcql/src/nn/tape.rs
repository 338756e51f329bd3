//! The reverse-mode gradient tape.
//!
//! Tensors are dense row-major `f64` matrices. Every operation evaluates
//! eagerly, records its inputs, and is replayed once in reverse topological
//! order by [`Tape::backward`]. Any nonfinite forward value poisons the tape
//! and surfaces as an error before gradients are used.

use crate::error::{Error, Result};
use crate::nn::kernels;

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor shape/value mismatch");
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn scalar(v: f64) -> Self {
        Self { rows: 1, cols: 1, data: vec![v] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(NodeId, NodeId),
    /// (m,n) + (1,n) with the row vector broadcast over rows.
    AddRow(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MinElem(NodeId, NodeId),
    Scale(NodeId, f64),
    AddConst(NodeId, f64),
    Relu(NodeId),
    Sigmoid(NodeId),
    Sqrt(NodeId),
    Square(NodeId),
    ConcatCols(NodeId, NodeId),
    SumRows(NodeId),
    MeanAll(NodeId),
    Reshape(NodeId),
    LogSumExpRows(NodeId),
    LogSoftmaxRows(NodeId),
    SoftmaxRows(NodeId),
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Single-threaded operation record.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    poison: Option<String>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        let t = self.value(id);
        assert_eq!(t.len(), 1, "scalar_value on non-scalar node");
        t.data[0]
    }

    /// First nonfinite value recorded, if any.
    pub fn ensure_finite(&self) -> Result<()> {
        match &self.poison {
            Some(msg) => Err(Error::Numeric(format!("nonfinite value in forward pass: {msg}"))),
            None => Ok(()),
        }
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> NodeId {
        if self.poison.is_none() && value.data.iter().any(|v| !v.is_finite()) {
            self.poison = Some(format!("{op:?}"));
        }
        self.nodes.push(Node { op, value, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.push(Op::Leaf, value, requires_grad)
    }

    /// Constant leaf; gradients never flow into it.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, false)
    }

    /// Cuts the node out of the gradient graph.
    pub fn detach(&mut self, id: NodeId) -> NodeId {
        let v = self.value(id).clone();
        self.constant(v)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (m, k) = self.value(a).shape();
        let (k2, n) = self.value(b).shape();
        assert_eq!(k, k2, "matmul inner dimension mismatch: {k} vs {k2}");
        let mut out = vec![0.0; m * n];
        {
            let av = &self.value(a).data;
            let bv = &self.value(b).data;
            matmul_into(av, bv, &mut out, m, k, n, false, false);
        }
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::Matmul(a, b), Tensor::new(m, n, out), needs)
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (m, n) = self.value(a).shape();
        assert_eq!(self.value(row).len(), n, "add_row width mismatch");
        let mut out = self.value(a).data.clone();
        let rv = &self.value(row).data;
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] += rv[j];
            }
        }
        let needs = self.needs(a) || self.needs(row);
        self.push(Op::AddRow(a, row), Tensor::new(m, n, out), needs)
    }

    fn elementwise(&mut self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64, op: Op) -> NodeId {
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "elementwise shape mismatch");
        let (m, n) = self.value(a).shape();
        let out: Vec<f64> = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(x, y)| f(*x, *y))
            .collect();
        let needs = self.needs(a) || self.needs(b);
        self.push(op, Tensor::new(m, n, out), needs)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.elementwise(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.elementwise(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.elementwise(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise minimum; gradient routes to the smaller input (ties to the
    /// first argument).
    pub fn min_elem(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.elementwise(a, b, f64::min, Op::MinElem(a, b))
    }

    fn unary(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let (m, n) = self.value(a).shape();
        let out: Vec<f64> = self.value(a).data.iter().map(|x| f(*x)).collect();
        let needs = self.needs(a);
        self.push(op, Tensor::new(m, n, out), needs)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_const(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(a, |x| x + c, Op::AddConst(a, c))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, kernels::sigmoid, Op::Sigmoid(a))
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::sqrt, Op::Sqrt(a))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (m, p) = self.value(a).shape();
        let (m2, q) = self.value(b).shape();
        assert_eq!(m, m2, "concat_cols row mismatch");
        let mut out = Vec::with_capacity(m * (p + q));
        for i in 0..m {
            out.extend_from_slice(&self.value(a).data[i * p..(i + 1) * p]);
            out.extend_from_slice(&self.value(b).data[i * q..(i + 1) * q]);
        }
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::ConcatCols(a, b), Tensor::new(m, p + q, out), needs)
    }

    /// Row sums: (m, n) -> (m, 1).
    pub fn sum_rows(&mut self, a: NodeId) -> NodeId {
        let (m, n) = self.value(a).shape();
        let out: Vec<f64> = (0..m)
            .map(|i| self.value(a).data[i * n..(i + 1) * n].iter().sum())
            .collect();
        let needs = self.needs(a);
        self.push(Op::SumRows(a), Tensor::new(m, 1, out), needs)
    }

    /// Mean over every entry: -> (1, 1).
    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let len = self.value(a).len();
        assert!(len > 0, "mean_all on empty tensor");
        let s: f64 = self.value(a).data.iter().sum();
        let needs = self.needs(a);
        self.push(Op::MeanAll(a), Tensor::scalar(s / len as f64), needs)
    }

    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> NodeId {
        assert_eq!(self.value(a).len(), rows * cols, "reshape size mismatch");
        let out = Tensor::new(rows, cols, self.value(a).data.clone());
        let needs = self.needs(a);
        self.push(Op::Reshape(a), out, needs)
    }

    /// Numerically stable row-wise log-sum-exp: (m, n) -> (m, 1).
    pub fn logsumexp_rows(&mut self, a: NodeId) -> NodeId {
        let (m, n) = self.value(a).shape();
        assert!(n > 0, "logsumexp over empty axis");
        let out: Vec<f64> = (0..m)
            .map(|i| kernels::logsumexp_slice(&self.value(a).data[i * n..(i + 1) * n]))
            .collect();
        let needs = self.needs(a);
        self.push(Op::LogSumExpRows(a), Tensor::new(m, 1, out), needs)
    }

    /// Row-wise log-softmax with max-subtraction stabilization.
    pub fn log_softmax_rows(&mut self, a: NodeId) -> NodeId {
        let (m, n) = self.value(a).shape();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &self.value(a).data[i * n..(i + 1) * n];
            let lse = kernels::logsumexp_slice(row);
            for j in 0..n {
                out[i * n + j] = row[j] - lse;
            }
        }
        let needs = self.needs(a);
        self.push(Op::LogSoftmaxRows(a), Tensor::new(m, n, out), needs)
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let (m, n) = self.value(a).shape();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &self.value(a).data[i * n..(i + 1) * n];
            out[i * n..(i + 1) * n].copy_from_slice(&kernels::softmax_slice(row));
        }
        let needs = self.needs(a);
        self.push(Op::SoftmaxRows(a), Tensor::new(m, n, out), needs)
    }

    /// Batch-mean cross entropy between `softmax(p/tau)` and
    /// `softmax(q/tau)`, row-wise. Callers detach `p` when it is a fixed
    /// target.
    pub fn softmax_xent(&mut self, p: NodeId, q: NodeId, tau: f64) -> NodeId {
        assert!(tau > 0.0, "temperature must be positive");
        assert_eq!(self.value(p).shape(), self.value(q).shape(), "softmax_xent shape mismatch");
        let ps = self.scale(p, 1.0 / tau);
        let qs = self.scale(q, 1.0 / tau);
        let probs = self.softmax_rows(ps);
        let logq = self.log_softmax_rows(qs);
        let prod = self.mul(probs, logq);
        let per_row = self.sum_rows(prod);
        let mean = self.mean_all(per_row);
        self.scale(mean, -1.0)
    }

    /// Backpropagates from a scalar loss, returning per-node gradients
    /// (present only for nodes on a `requires_grad` path).
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        self.ensure_finite()?;
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::Schema(format!(
                "backward requires a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        if !self.nodes[loss.0].needs_grad {
            return Err(Error::Schema("loss is detached from all trainable leaves".into()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Matmul(a, b) => {
                    let (m, k) = self.value(a).shape();
                    let n = self.value(b).cols;
                    if self.needs(a) {
                        // dA = G B^T
                        let mut da = vec![0.0; m * k];
                        matmul_into(&g.data, &self.value(b).data, &mut da, m, n, k, false, true);
                        accumulate(&mut grads[a.0], Tensor::new(m, k, da));
                    }
                    if self.needs(b) {
                        // dB = A^T G
                        let mut db = vec![0.0; k * n];
                        matmul_into(&self.value(a).data, &g.data, &mut db, k, m, n, true, false);
                        accumulate(&mut grads[b.0], Tensor::new(k, n, db));
                    }
                }
                Op::AddRow(a, row) => {
                    let (m, n) = self.value(a).shape();
                    if self.needs(a) {
                        accumulate(&mut grads[a.0], g.clone());
                    }
                    if self.needs(row) {
                        let mut dr = vec![0.0; n];
                        for i in 0..m {
                            for j in 0..n {
                                dr[j] += g.data[i * n + j];
                            }
                        }
                        let (rr, rc) = self.value(row).shape();
                        accumulate(&mut grads[row.0], Tensor::new(rr, rc, dr));
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(a) {
                        accumulate(&mut grads[a.0], g.clone());
                    }
                    if self.needs(b) {
                        accumulate(&mut grads[b.0], g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs(a) {
                        accumulate(&mut grads[a.0], g.clone());
                    }
                    if self.needs(b) {
                        let neg = Tensor::new(g.rows, g.cols, g.data.iter().map(|v| -v).collect());
                        accumulate(&mut grads[b.0], neg);
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(a) {
                        let da: Vec<f64> =
                            g.data.iter().zip(&self.value(b).data).map(|(gv, bv)| gv * bv).collect();
                        accumulate(&mut grads[a.0], Tensor::new(g.rows, g.cols, da));
                    }
                    if self.needs(b) {
                        let db: Vec<f64> =
                            g.data.iter().zip(&self.value(a).data).map(|(gv, av)| gv * av).collect();
                        accumulate(&mut grads[b.0], Tensor::new(g.rows, g.cols, db));
                    }
                }
                Op::MinElem(a, b) => {
                    let av = &self.value(a).data;
                    let bv = &self.value(b).data;
                    if self.needs(a) {
                        let da: Vec<f64> = g
                            .data
                            .iter()
                            .enumerate()
                            .map(|(i, gv)| if av[i] <= bv[i] { *gv } else { 0.0 })
                            .collect();
                        accumulate(&mut grads[a.0], Tensor::new(g.rows, g.cols, da));
                    }
                    if self.needs(b) {
                        let db: Vec<f64> = g
                            .data
                            .iter()
                            .enumerate()
                            .map(|(i, gv)| if av[i] <= bv[i] { 0.0 } else { *gv })
                            .collect();
                        accumulate(&mut grads[b.0], Tensor::new(g.rows, g.cols, db));
                    }
                }
                Op::Scale(a, c) => {
                    if self.needs(a) {
                        let da: Vec<f64> = g.data.iter().map(|gv| gv * c).collect();
                        accumulate(&mut grads[a.0], Tensor::new(g.rows, g.cols, da));
                    }
                }
                Op::AddConst(a, _) => {
                    if self.needs(a) {
                        accumulate(&mut grads[a.0], g);
                    }
                }
                Op::Relu(a) => {
                    if self.needs(a) {
                        let da: Vec<f64> = g
                            .data
                            .iter()
                            .zip(&self.value(a).data)
                            .map(|(gv, x)| if *x > 0.0 { *gv } else { 0.0 })
                            .collect();
                        accumulate(&mut grads[a.0], Tensor::new(g.rows, g.cols, da));
                    }
                }
                Op::Sigmoid(a) => {
                    if self.needs(a) {
                        let yv = &self.nodes[idx].value.data;
                        let da: Vec<f64> =
                            g.data.iter().zip(yv).map(|(gv, y)| gv * y * (1.0 - y)).collect();
                        accumulate(&mut grads[a.0], Tensor::new(g.rows, g.cols, da));
                    }
                }
                Op::Sqrt(a) => {
                    if self.needs(a) {
                        let yv = &self.nodes[idx].value.data;
                        let da: Vec<f64> =
                            g.data.iter().zip(yv).map(|(gv, y)| gv / (2.0 * y)).collect();
                        accumulate(&mut grads[a.0], Tensor::new(g.rows, g.cols, da));
                    }
                }
                Op::Square(a) => {
                    if self.needs(a) {
                        let xv = &self.value(a).data;
                        let da: Vec<f64> =
                            g.data.iter().zip(xv).map(|(gv, x)| gv * 2.0 * x).collect();
                        accumulate(&mut grads[a.0], Tensor::new(g.rows, g.cols, da));
                    }
                }
                Op::ConcatCols(a, b) => {
                    let (m, p) = self.value(a).shape();
                    let q = self.value(b).cols;
                    if self.needs(a) {
                        let mut da = vec![0.0; m * p];
                        for i in 0..m {
                            da[i * p..(i + 1) * p]
                                .copy_from_slice(&g.data[i * (p + q)..i * (p + q) + p]);
                        }
                        accumulate(&mut grads[a.0], Tensor::new(m, p, da));
                    }
                    if self.needs(b) {
                        let mut db = vec![0.0; m * q];
                        for i in 0..m {
                            db[i * q..(i + 1) * q]
                                .copy_from_slice(&g.data[i * (p + q) + p..(i + 1) * (p + q)]);
                        }
                        accumulate(&mut grads[b.0], Tensor::new(m, q, db));
                    }
                }
                Op::SumRows(a) => {
                    if self.needs(a) {
                        let (m, n) = self.value(a).shape();
                        let mut da = vec![0.0; m * n];
                        for i in 0..m {
                            for j in 0..n {
                                da[i * n + j] = g.data[i];
                            }
                        }
                        accumulate(&mut grads[a.0], Tensor::new(m, n, da));
                    }
                }
                Op::MeanAll(a) => {
                    if self.needs(a) {
                        let (m, n) = self.value(a).shape();
                        let scale = g.data[0] / (m * n) as f64;
                        accumulate(&mut grads[a.0], Tensor::new(m, n, vec![scale; m * n]));
                    }
                }
                Op::Reshape(a) => {
                    if self.needs(a) {
                        let (m, n) = self.value(a).shape();
                        accumulate(&mut grads[a.0], Tensor::new(m, n, g.data));
                    }
                }
                Op::LogSumExpRows(a) => {
                    if self.needs(a) {
                        let (m, n) = self.value(a).shape();
                        let mut da = vec![0.0; m * n];
                        for i in 0..m {
                            let row = &self.value(a).data[i * n..(i + 1) * n];
                            let p = kernels::softmax_slice(row);
                            for j in 0..n {
                                da[i * n + j] = g.data[i] * p[j];
                            }
                        }
                        accumulate(&mut grads[a.0], Tensor::new(m, n, da));
                    }
                }
                Op::LogSoftmaxRows(a) => {
                    if self.needs(a) {
                        let (m, n) = self.value(a).shape();
                        let mut da = vec![0.0; m * n];
                        for i in 0..m {
                            let row = &self.value(a).data[i * n..(i + 1) * n];
                            let p = kernels::softmax_slice(row);
                            let gsum: f64 = g.data[i * n..(i + 1) * n].iter().sum();
                            for j in 0..n {
                                da[i * n + j] = g.data[i * n + j] - p[j] * gsum;
                            }
                        }
                        accumulate(&mut grads[a.0], Tensor::new(m, n, da));
                    }
                }
                Op::SoftmaxRows(a) => {
                    if self.needs(a) {
                        let (m, n) = self.value(a).shape();
                        let yv = &self.nodes[idx].value.data;
                        let mut da = vec![0.0; m * n];
                        for i in 0..m {
                            let p = &yv[i * n..(i + 1) * n];
                            let gr = &g.data[i * n..(i + 1) * n];
                            let dot: f64 = p.iter().zip(gr).map(|(pj, gj)| pj * gj).sum();
                            for j in 0..n {
                                da[i * n + j] = p[j] * (gr[j] - dot);
                            }
                        }
                        accumulate(&mut grads[a.0], Tensor::new(m, n, da));
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to the node, zero-filled if the node
    /// never received upstream gradient.
    pub fn get(&self, tape: &Tape, id: NodeId) -> Tensor {
        match &self.grads[id.0] {
            Some(t) => t.clone(),
            None => {
                let (m, n) = tape.value(id).shape();
                Tensor::zeros(m, n)
            }
        }
    }
}

fn accumulate(slot: &mut Option<Tensor>, delta: Tensor) {
    match slot {
        Some(existing) => {
            for (e, d) in existing.data.iter_mut().zip(&delta.data) {
                *e += d;
            }
        }
        None => *slot = Some(delta),
    }
}

/// `out += A(m,k) * B(k,n)` with optional transposes applied to the operand
/// index maps. Dimensions are those of the *logical* (possibly transposed)
/// operands: A is m×k, B is k×n.
fn matmul_into(
    a: &[f64],
    b: &[f64],
    out: &mut [f64],
    m: usize,
    k: usize,
    n: usize,
    a_transposed: bool,
    b_transposed: bool,
) {
    for i in 0..m {
        for l in 0..k {
            let av = if a_transposed { a[l * m + i] } else { a[i * k + l] };
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            if b_transposed {
                for j in 0..n {
                    orow[j] += av * b[j * k + l];
                }
            } else {
                let brow = &b[l * n..(l + 1) * n];
                for j in 0..n {
                    orow[j] += av * brow[j];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{central_diff, max_relative_error};

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(2, 3, vec![1.0, -2.0, 3.0, 0.5, 4.0, -1.0]), true);
        let s = tape.sum_rows(x);
        let m = tape.mean_all(s);
        let total = tape.scale(m, 2.0); // mean of 2 row sums * 2 = grand sum
        let grads = tape.backward(total).unwrap();
        assert_eq!(grads.get(&tape, x).data, vec![1.0; 6]);
    }

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0), true);
        let y = tape.square(x);
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(&tape, x).data, vec![6.0]);
    }

    #[test]
    fn logsumexp_values_and_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(1, 2, vec![0.0, 0.0]), true);
        let y = tape.logsumexp_rows(x);
        assert!((tape.scalar_value(y) - 2.0f64.ln()).abs() < 1e-12);
        let grads = tape.backward(y).unwrap();
        let g = grads.get(&tape, x);
        assert!((g.data[0] - 0.5).abs() < 1e-12);
        assert!((g.data[1] - 0.5).abs() < 1e-12);

        // Stability: huge inputs do not overflow.
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(1, 2, vec![1000.0, 1000.0]));
        let y = tape.logsumexp_rows(x);
        assert!((tape.scalar_value(y) - (1000.0 + 2.0f64.ln())).abs() < 1e-9);

        // [0, ln 3] -> ln 4
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(1, 2, vec![0.0, 3.0f64.ln()]));
        let y = tape.logsumexp_rows(x);
        assert!((tape.scalar_value(y) - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn softmax_xent_uniform_case() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::new(1, 2, vec![0.0, 0.0]));
        let q = tape.constant(Tensor::new(1, 2, vec![0.0, 0.0]));
        let h = tape.softmax_xent(p, q, 1.0);
        assert!((tape.scalar_value(h) - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn softmax_xent_shift_invariance_and_lower_bound() {
        let logits = vec![0.3, -1.2, 0.8];
        let shifted: Vec<f64> = logits.iter().map(|v| v + 5.0).collect();
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::new(1, 3, logits.clone()));
        let q = tape.constant(Tensor::new(1, 3, logits.clone()));
        let h_self = tape.softmax_xent(p, q, 1.0);
        let ps = tape.constant(Tensor::new(1, 3, shifted.clone()));
        let qs = tape.constant(Tensor::new(1, 3, shifted));
        let h_shift = tape.softmax_xent(ps, qs, 1.0);
        assert!((tape.scalar_value(h_self) - tape.scalar_value(h_shift)).abs() < 1e-12);

        // Cross entropy vs a different q is never below the entropy of p.
        let other = tape.constant(Tensor::new(1, 3, vec![1.0, 0.0, -1.0]));
        let h_other = tape.softmax_xent(p, other, 1.0);
        assert!(tape.scalar_value(h_other) >= tape.scalar_value(h_self) - 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(2, 4, vec![0.0, 1.0, -3.0, 2.0, 100.0, 100.0, 99.0, 98.0]));
        let p = tape.softmax_rows(x);
        for i in 0..2 {
            let s: f64 = tape.value(p).data[i * 4..(i + 1) * 4].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_rejects_non_scalar_and_detached_losses() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(1, 2, vec![1.0, 2.0]), true);
        assert!(tape.backward(x).is_err());
        let c = tape.constant(Tensor::scalar(1.0));
        assert!(tape.backward(c).is_err());
    }

    #[test]
    fn nan_poisons_the_tape() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(-1.0), true);
        let y = tape.sqrt(x); // NaN
        assert!(tape.backward(y).is_err());
    }

    /// Finite-difference check of a composite expression exercising most ops.
    #[test]
    fn composite_expression_matches_finite_differences() {
        let x0 = vec![0.31, -0.84, 0.52, 1.27, -0.06, 0.44];
        let loss_of = |x: &[f64]| -> f64 {
            let mut tape = Tape::new();
            let a = tape.leaf(Tensor::new(2, 3, x.to_vec()), true);
            let w = tape.constant(Tensor::new(3, 3, vec![0.2, -0.1, 0.4, 0.7, 0.3, -0.5, 0.1, 0.9, 0.6]));
            let h = tape.matmul(a, w);
            let s = tape.sigmoid(h);
            let ls = tape.log_softmax_rows(h);
            let prod = tape.mul(s, ls);
            let lse = tape.logsumexp_rows(prod);
            let sq = tape.square(lse);
            let m = tape.mean_all(sq);
            tape.scalar_value(m)
        };
        let analytic = {
            let mut tape = Tape::new();
            let a = tape.leaf(Tensor::new(2, 3, x0.clone()), true);
            let w = tape.constant(Tensor::new(3, 3, vec![0.2, -0.1, 0.4, 0.7, 0.3, -0.5, 0.1, 0.9, 0.6]));
            let h = tape.matmul(a, w);
            let s = tape.sigmoid(h);
            let ls = tape.log_softmax_rows(h);
            let prod = tape.mul(s, ls);
            let lse = tape.logsumexp_rows(prod);
            let sq = tape.square(lse);
            let m = tape.mean_all(sq);
            tape.backward(m).unwrap().get(&tape, a).data
        };
        let numeric = central_diff(loss_of, &x0, 1e-5);
        assert!(max_relative_error(&analytic, &numeric) < 1e-4);
    }
}
