//! Reverse-mode gradient tape.
//!
//! Every op appends a node holding its value and, when gradients are being
//! recorded, the information its backward rule needs. [`Tape::backward`]
//! walks the nodes in reverse creation order, which is a valid topological
//! order because a node can only reference earlier nodes.
//!
//! Two scopes sever history:
//! - [`Tape::no_grad`] evaluates a closure without recording anything and
//!   then hands its results back as constants (the truncated warm-up of a
//!   TBPTT window);
//! - [`Tape::detach`] turns a single value into a constant (stop-gradient).

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::ops::{kernels, PairRotation};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    OneMinus(Var),
    MulScalar(Var, Var),
    DivScalar(Var, Var),
    MulCol(Var, Var),
    Sigmoid(Var),
    Silu(Var),
    Softmax(Var),
    RmsNorm {
        x: Var,
        scale: Var,
        inv_rms: Vec<f64>,
    },
    Rotate {
        x: Var,
        rotation: Arc<PairRotation>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    MeanRows(Var),
    Entropy(Var),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

#[derive(Debug)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    grad_enabled: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            grad_enabled: true,
        }
    }

    /// Adds an input tensor. `requires_grad` marks a trainable leaf.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        let requires_grad = requires_grad && self.grad_enabled;
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn is_grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of non-leaf nodes that take part in backpropagation.
    pub fn recorded_ops(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| n.requires_grad && !matches!(n.op, Op::Leaf))
            .count()
    }

    /// Gradient of the last [`backward`](Self::backward) call for a leaf.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Stop-gradient: a constant copy of `v`'s value.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    /// Runs `f` without recording gradients. Every node `f` creates is
    /// discarded afterwards; the returned vars are re-added as constants, so
    /// the warm-up costs no tape memory.
    pub fn no_grad<F>(&mut self, f: F) -> Result<Vec<Var>>
    where
        F: FnOnce(&mut Tape) -> Result<Vec<Var>>,
    {
        let start = self.nodes.len();
        let previous = self.grad_enabled;
        self.grad_enabled = false;
        let outcome = f(self);
        self.grad_enabled = previous;
        let outputs = outcome?;
        let values: Vec<Option<Tensor>> = outputs
            .iter()
            .map(|v| (v.0 >= start).then(|| self.nodes[v.0].value.clone()))
            .collect();
        self.nodes.truncate(start);
        Ok(outputs
            .into_iter()
            .zip(values)
            .map(|(v, value)| match value {
                Some(value) => self.constant(value),
                // Created before the scope: already a valid handle.
                None => v,
            })
            .collect())
    }

    pub(crate) fn push(&mut self, name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = self.grad_enabled && op_parents(&op).iter().any(|p| self.nodes[p.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Backpropagates from a scalar `loss`. Gradients of leaves are kept and
    /// can be read with [`grad`](Self::grad); intermediate gradients are
    /// dropped as soon as they have been propagated.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.numel() != 1 {
            return Err(Error::shape("backward", loss_value.shape(), &[1]));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::ones(loss_value.shape()));
        }
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
        }
        self.grads = grads;
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.wants(*a) {
                    let mut ga = vec![0.0; m * k];
                    kernels::matmul_nt(g.data(), bv.data(), &mut ga, m, n, k);
                    accumulate(grads, *a, av.shape(), ga);
                }
                if self.wants(*b) {
                    let mut gb = vec![0.0; k * n];
                    kernels::matmul_tn(av.data(), g.data(), &mut gb, m, k, n);
                    accumulate(grads, *b, bv.shape(), gb);
                }
            }
            Op::MatMulNt(a, b) => {
                // y = a bᵀ with a: m×k, b: n×k.
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.rows());
                if self.wants(*a) {
                    let mut ga = vec![0.0; m * k];
                    kernels::matmul(g.data(), bv.data(), &mut ga, m, n, k);
                    accumulate(grads, *a, av.shape(), ga);
                }
                if self.wants(*b) {
                    let mut gb = vec![0.0; n * k];
                    kernels::matmul_tn(g.data(), av.data(), &mut gb, m, n, k);
                    accumulate(grads, *b, bv.shape(), gb);
                }
            }
            Op::Add(a, b) => {
                for p in [*a, *b] {
                    if self.wants(p) {
                        accumulate(grads, p, g.shape(), g.data().to_vec());
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.shape(), g.data().to_vec());
                }
                if self.wants(*b) {
                    accumulate(grads, *b, g.shape(), g.data().iter().map(|v| -v).collect());
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if self.wants(*a) {
                    let ga = g.data().iter().zip(bv.data()).map(|(g, b)| g * b).collect();
                    accumulate(grads, *a, av.shape(), ga);
                }
                if self.wants(*b) {
                    let gb = g.data().iter().zip(av.data()).map(|(g, a)| g * a).collect();
                    accumulate(grads, *b, bv.shape(), gb);
                }
            }
            Op::Scale(x, c) => {
                accumulate(grads, *x, g.shape(), g.data().iter().map(|v| v * c).collect());
            }
            Op::OneMinus(x) => {
                accumulate(grads, *x, g.shape(), g.data().iter().map(|v| -v).collect());
            }
            Op::MulScalar(x, s) => {
                let (xv, sv) = (val(*x), val(*s).item());
                if self.wants(*x) {
                    accumulate(grads, *x, xv.shape(), g.data().iter().map(|v| v * sv).collect());
                }
                if self.wants(*s) {
                    let gs: f64 = g.data().iter().zip(xv.data()).map(|(g, x)| g * x).sum();
                    accumulate(grads, *s, val(*s).shape(), vec![gs]);
                }
            }
            Op::DivScalar(x, s) => {
                let (xv, sv) = (val(*x), val(*s).item());
                if self.wants(*x) {
                    accumulate(grads, *x, xv.shape(), g.data().iter().map(|v| v / sv).collect());
                }
                if self.wants(*s) {
                    let dot: f64 = g.data().iter().zip(xv.data()).map(|(g, x)| g * x).sum();
                    accumulate(grads, *s, val(*s).shape(), vec![-dot / (sv * sv)]);
                }
            }
            Op::MulCol(x, c) => {
                let (xv, cv) = (val(*x), val(*c));
                let cols = xv.cols();
                if self.wants(*x) {
                    let gx = g
                        .data()
                        .chunks(cols)
                        .zip(cv.data())
                        .flat_map(|(row, &c)| row.iter().map(move |v| v * c))
                        .collect();
                    accumulate(grads, *x, xv.shape(), gx);
                }
                if self.wants(*c) {
                    let gc = g
                        .data()
                        .chunks(cols)
                        .zip(xv.data().chunks(cols))
                        .map(|(gr, xr)| kernels::dot(gr, xr))
                        .collect();
                    accumulate(grads, *c, cv.shape(), gc);
                }
            }
            Op::Sigmoid(x) => {
                let y = &node.value;
                let gx = g.data().iter().zip(y.data()).map(|(g, y)| g * y * (1.0 - y)).collect();
                accumulate(grads, *x, y.shape(), gx);
            }
            Op::Silu(x) => {
                let xv = val(*x);
                let gx = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(g, &x)| {
                        let s = kernels::sigmoid(x);
                        g * (s + x * s * (1.0 - s))
                    })
                    .collect();
                accumulate(grads, *x, xv.shape(), gx);
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let cols = y.cols();
                let mut gx = Vec::with_capacity(y.numel());
                for (gr, yr) in g.data().chunks(cols).zip(y.data().chunks(cols)) {
                    let dot = kernels::dot(gr, yr);
                    gx.extend(gr.iter().zip(yr).map(|(g, y)| y * (g - dot)));
                }
                accumulate(grads, *x, y.shape(), gx);
            }
            Op::RmsNorm { x, scale, inv_rms } => {
                let (xv, sv) = (val(*x), val(*scale));
                let cols = xv.cols();
                let s = sv.data();
                if self.wants(*scale) {
                    let mut gs = vec![0.0; cols];
                    for ((gr, xr), inv) in g.data().chunks(cols).zip(xv.data().chunks(cols)).zip(inv_rms) {
                        for j in 0..cols {
                            gs[j] += gr[j] * xr[j] * inv;
                        }
                    }
                    accumulate(grads, *scale, sv.shape(), gs);
                }
                if self.wants(*x) {
                    let mut gx = Vec::with_capacity(xv.numel());
                    for ((gr, xr), &inv) in g.data().chunks(cols).zip(xv.data().chunks(cols)).zip(inv_rms) {
                        // a = g ⊙ scale, x̂ = x·inv; dx = inv (a − x̂ ⟨a, x̂⟩ / d)
                        let mut proj = 0.0;
                        for j in 0..cols {
                            proj += gr[j] * s[j] * xr[j] * inv;
                        }
                        proj /= cols as f64;
                        gx.extend((0..cols).map(|j| inv * (gr[j] * s[j] - xr[j] * inv * proj)));
                    }
                    accumulate(grads, *x, xv.shape(), gx);
                }
            }
            Op::Rotate { x, rotation } => {
                let xv = val(*x);
                let mut gx = g.data().to_vec();
                rotation.apply(&mut gx, xv.rows(), xv.cols(), true);
                accumulate(grads, *x, xv.shape(), gx);
            }
            Op::SliceCols { x, start } => {
                let xv = val(*x);
                let (cols, width) = (xv.cols(), g.cols());
                let mut gx = vec![0.0; xv.numel()];
                for (dst, src) in gx.chunks_mut(cols).zip(g.data().chunks(width)) {
                    dst[*start..start + width].copy_from_slice(src);
                }
                accumulate(grads, *x, xv.shape(), gx);
            }
            Op::ConcatCols(parts) => {
                let total = g.cols();
                let mut offset = 0;
                for p in parts {
                    let pv = val(*p);
                    let width = pv.cols();
                    if self.wants(*p) {
                        let mut gp = Vec::with_capacity(pv.numel());
                        for row in g.data().chunks(total) {
                            gp.extend_from_slice(&row[offset..offset + width]);
                        }
                        accumulate(grads, *p, pv.shape(), gp);
                    }
                    offset += width;
                }
            }
            Op::Gather { table, ids } => {
                let tv = val(*table);
                let cols = tv.cols();
                let mut gt = vec![0.0; tv.numel()];
                for (row, &id) in g.data().chunks(cols).zip(ids) {
                    for (dst, src) in gt[id * cols..(id + 1) * cols].iter_mut().zip(row) {
                        *dst += src;
                    }
                }
                accumulate(grads, *table, tv.shape(), gt);
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let lv = val(*logits);
                let cols = lv.cols();
                let scale = g.item() / targets.len() as f64;
                let mut gl: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (r, &t) in targets.iter().enumerate() {
                    gl[r * cols + t] -= scale;
                }
                accumulate(grads, *logits, lv.shape(), gl);
            }
            Op::MeanRows(x) => {
                let xv = val(*x);
                let rows = xv.rows() as f64;
                let gx = (0..xv.rows()).flat_map(|_| g.data().iter().map(|v| v / rows)).collect();
                accumulate(grads, *x, xv.shape(), gx);
            }
            Op::Entropy(x) => {
                let xv = val(*x);
                let gs = g.item();
                let gx = xv.data().iter().map(|&p| -gs * (libm::log(p) + 1.0)).collect();
                accumulate(grads, *x, xv.shape(), gx);
            }
            Op::Sum(x) => {
                let xv = val(*x);
                accumulate(grads, *x, xv.shape(), vec![g.item(); xv.numel()]);
            }
            Op::Mean(x) => {
                let xv = val(*x);
                let v = g.item() / xv.numel() as f64;
                accumulate(grads, *x, xv.shape(), vec![v; xv.numel()]);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, shape: &[usize], data: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(&data) {
                *a += b;
            }
        }
        slot @ None => {
            *slot = Some(Tensor::new(shape, data).expect("gradient shape mirrors value shape"));
        }
    }
}

fn op_parents(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf => Vec::new(),
        Op::MatMul(a, b)
        | Op::MatMulNt(a, b)
        | Op::Add(a, b)
        | Op::Sub(a, b)
        | Op::Mul(a, b)
        | Op::MulScalar(a, b)
        | Op::DivScalar(a, b)
        | Op::MulCol(a, b) => vec![*a, *b],
        Op::RmsNorm { x, scale, .. } => vec![*x, *scale],
        Op::Scale(x, _)
        | Op::OneMinus(x)
        | Op::Sigmoid(x)
        | Op::Silu(x)
        | Op::Softmax(x)
        | Op::MeanRows(x)
        | Op::Entropy(x)
        | Op::Sum(x)
        | Op::Mean(x)
        | Op::Rotate { x, .. }
        | Op::SliceCols { x, .. } => vec![*x],
        Op::ConcatCols(parts) => parts.clone(),
        Op::Gather { table, .. } => vec![*table],
        Op::CrossEntropy { logits, .. } => vec![*logits],
    }
}
