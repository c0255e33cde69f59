use std::cell::RefCell;

use super::kernels::{gemm_nn, gemm_nt, gemm_tn, sigmoid, softplus};
use super::{SparseMatrix, Tensor};
use crate::error::{Error, Result};

/// Recording of every operation of one forward pass.
///
/// Nodes are appended in creation order, so reverse index order is a valid
/// reverse topological order for backward.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    // Only populated for leaves.
    grad: Option<Tensor>,
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddRowBias {
        m: usize,
        b: usize,
        scales: Option<Vec<f64>>,
    },
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Log(usize),
    Exp(usize),
    Softplus(usize),
    Concat(usize, usize),
    Outer(usize, usize),
    Reshape(usize),
    Transpose(usize),
    MeanRows(usize),
    Sum(usize),
    Cosine(usize, usize),
    Softmax(usize),
    LogSoftmax(usize),
    GatherRows(usize, Vec<usize>),
    Row(usize, usize),
    StackRows(Vec<usize>),
    NormalizeRows(usize, f64),
    LogSumExpRows { m: usize, skip_diagonal: bool },
    Pick(usize, Vec<(usize, usize)>),
    SparseLeft(usize, SparseMatrix),
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(#{}, {:?})", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a differentiable leaf.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Accumulated gradient of a leaf; zeros if it was never reached.
    pub fn grad(&self, v: Var<'_>) -> Tensor {
        let nodes = self.nodes.borrow();
        let node = &nodes[v.id];
        node.grad
            .clone()
            .unwrap_or_else(|| Tensor::zeros(node.value.shape()))
    }

    pub fn zero_grad(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.grad = None;
        }
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn requires(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// Propagates d(loss)/d(node) to every reachable leaf, adding into any
    /// gradient already stored from earlier calls.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        let leaf_grads = {
            let nodes = self.nodes.borrow();
            let root = &nodes[loss.id];
            if root.value.numel() != 1 {
                return Err(Error::NonScalarRoot(root.value.shape().to_vec()));
            }
            let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.id).map(|_| None).collect();
            grads[loss.id] = Some(vec![1.0]);
            let mut leaf_grads = Vec::new();
            for id in (0..=loss.id).rev() {
                let Some(g) = grads[id].take() else { continue };
                let node = &nodes[id];
                if !node.requires_grad {
                    continue;
                }
                if let Op::Leaf = node.op {
                    leaf_grads.push((id, g));
                } else {
                    propagate(&nodes, id, &g, &mut grads);
                }
            }
            leaf_grads
        };
        let mut nodes = self.nodes.borrow_mut();
        for (id, g) in leaf_grads {
            let node = &mut nodes[id];
            match &mut node.grad {
                Some(existing) => {
                    for (e, d) in existing.data_mut().iter_mut().zip(&g) {
                        *e += d;
                    }
                }
                None => {
                    node.grad = Some(Tensor::new(node.value.shape().to_vec(), g)?);
                }
            }
        }
        Ok(())
    }
}

fn add_into(grads: &mut [Option<Vec<f64>>], id: usize, len: usize, f: impl FnOnce(&mut [f64])) {
    let slot = grads[id].get_or_insert_with(|| vec![0.0; len]);
    f(slot);
}

fn propagate(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &nodes[id];
    let out = &node.value;
    let val = |i: usize| &nodes[i].value;
    let wants = |i: usize| nodes[i].requires_grad;
    let len = |i: usize| nodes[i].value.numel();

    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (m, k) = val(*a).rows_cols();
            let (_, n) = val(*b).rows_cols();
            if wants(*a) {
                add_into(grads, *a, m * k, |d| gemm_nt(g, val(*b).data(), d, m, n, k));
            }
            if wants(*b) {
                add_into(grads, *b, k * n, |d| gemm_tn(val(*a).data(), g, d, m, k, n));
            }
        }
        Op::Add(a, b) | Op::Sub(a, b) => {
            let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
            if wants(*a) {
                add_into(grads, *a, g.len(), |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
            }
            if wants(*b) {
                add_into(grads, *b, g.len(), |d| {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += sign * g)
                });
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a).data(), val(*b).data());
            if wants(*a) {
                add_into(grads, *a, g.len(), |d| {
                    for i in 0..g.len() {
                        d[i] += g[i] * bv[i];
                    }
                });
            }
            if wants(*b) {
                add_into(grads, *b, g.len(), |d| {
                    for i in 0..g.len() {
                        d[i] += g[i] * av[i];
                    }
                });
            }
        }
        Op::Scale(a, c) => {
            add_into(grads, *a, g.len(), |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += c * g));
        }
        Op::AddRowBias { m, b, scales } => {
            let (rows, cols) = out.rows_cols();
            if wants(*m) {
                add_into(grads, *m, g.len(), |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
            }
            if wants(*b) {
                add_into(grads, *b, cols, |d| {
                    for r in 0..rows {
                        let s = scales.as_ref().map_or(1.0, |s| s[r]);
                        for c in 0..cols {
                            d[c] += s * g[r * cols + c];
                        }
                    }
                });
            }
        }
        Op::Relu(a) => {
            let x = val(*a).data();
            add_into(grads, *a, g.len(), |d| {
                for i in 0..g.len() {
                    if x[i] > 0.0 {
                        d[i] += g[i];
                    }
                }
            });
        }
        Op::Sigmoid(a) => {
            let y = out.data();
            add_into(grads, *a, g.len(), |d| {
                for i in 0..g.len() {
                    d[i] += g[i] * y[i] * (1.0 - y[i]);
                }
            });
        }
        Op::Tanh(a) => {
            let y = out.data();
            add_into(grads, *a, g.len(), |d| {
                for i in 0..g.len() {
                    d[i] += g[i] * (1.0 - y[i] * y[i]);
                }
            });
        }
        Op::Log(a) => {
            let x = val(*a).data();
            add_into(grads, *a, g.len(), |d| {
                for i in 0..g.len() {
                    d[i] += g[i] / x[i];
                }
            });
        }
        Op::Exp(a) => {
            let y = out.data();
            add_into(grads, *a, g.len(), |d| {
                for i in 0..g.len() {
                    d[i] += g[i] * y[i];
                }
            });
        }
        Op::Softplus(a) => {
            let x = val(*a).data();
            add_into(grads, *a, g.len(), |d| {
                for i in 0..g.len() {
                    d[i] += g[i] * sigmoid(x[i]);
                }
            });
        }
        Op::Concat(a, b) => {
            let (rows, p) = val(*a).rows_cols();
            let (_, q) = val(*b).rows_cols();
            let w = p + q;
            if wants(*a) {
                add_into(grads, *a, rows * p, |d| {
                    for r in 0..rows {
                        for c in 0..p {
                            d[r * p + c] += g[r * w + c];
                        }
                    }
                });
            }
            if wants(*b) {
                add_into(grads, *b, rows * q, |d| {
                    for r in 0..rows {
                        for c in 0..q {
                            d[r * q + c] += g[r * w + p + c];
                        }
                    }
                });
            }
        }
        Op::Outer(h, v) => {
            let (hv, vv) = (val(*h).data(), val(*v).data());
            let (p, q) = (hv.len(), vv.len());
            if wants(*h) {
                add_into(grads, *h, p, |d| {
                    for i in 0..p {
                        d[i] += (0..q).map(|j| g[i * q + j] * vv[j]).sum::<f64>();
                    }
                });
            }
            if wants(*v) {
                add_into(grads, *v, q, |d| {
                    for i in 0..p {
                        for j in 0..q {
                            d[j] += g[i * q + j] * hv[i];
                        }
                    }
                });
            }
        }
        Op::Reshape(a) => {
            add_into(grads, *a, g.len(), |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
        }
        Op::Transpose(a) => {
            let (r, c) = val(*a).rows_cols();
            add_into(grads, *a, r * c, |d| {
                for i in 0..r {
                    for j in 0..c {
                        d[i * c + j] += g[j * r + i];
                    }
                }
            });
        }
        Op::MeanRows(a) => {
            let (k, c) = val(*a).rows_cols();
            let inv = 1.0 / k as f64;
            add_into(grads, *a, k * c, |d| {
                for i in 0..k {
                    for j in 0..c {
                        d[i * c + j] += g[j] * inv;
                    }
                }
            });
        }
        Op::Sum(a) => {
            let n = len(*a);
            add_into(grads, *a, n, |d| d.iter_mut().for_each(|d| *d += g[0]));
        }
        Op::Cosine(u, v) => {
            let (uv, vv) = (val(*u).data(), val(*v).data());
            let nu = norm(uv);
            let nv = norm(vv);
            let c = out.item();
            let g0 = g[0];
            if wants(*u) {
                add_into(grads, *u, uv.len(), |d| {
                    for i in 0..uv.len() {
                        d[i] += g0 * (vv[i] / (nu * nv) - c * uv[i] / (nu * nu));
                    }
                });
            }
            if wants(*v) {
                add_into(grads, *v, vv.len(), |d| {
                    for i in 0..vv.len() {
                        d[i] += g0 * (uv[i] / (nu * nv) - c * vv[i] / (nv * nv));
                    }
                });
            }
        }
        Op::Softmax(a) => {
            let (rows, cols) = out.rows_cols();
            let y = out.data();
            add_into(grads, *a, rows * cols, |d| {
                for r in 0..rows {
                    let s = r * cols..(r + 1) * cols;
                    let dot: f64 = g[s.clone()].iter().zip(&y[s.clone()]).map(|(a, b)| a * b).sum();
                    for i in s {
                        d[i] += y[i] * (g[i] - dot);
                    }
                }
            });
        }
        Op::LogSoftmax(a) => {
            let (rows, cols) = out.rows_cols();
            let y = out.data();
            add_into(grads, *a, rows * cols, |d| {
                for r in 0..rows {
                    let s = r * cols..(r + 1) * cols;
                    let total: f64 = g[s.clone()].iter().sum();
                    for i in s {
                        d[i] += g[i] - y[i].exp() * total;
                    }
                }
            });
        }
        Op::GatherRows(t, ids) => {
            let (rows, cols) = val(*t).rows_cols();
            add_into(grads, *t, rows * cols, |d| {
                for (r, &src) in ids.iter().enumerate() {
                    for c in 0..cols {
                        d[src * cols + c] += g[r * cols + c];
                    }
                }
            });
        }
        Op::Row(m, i) => {
            let (rows, cols) = val(*m).rows_cols();
            add_into(grads, *m, rows * cols, |d| {
                for c in 0..cols {
                    d[i * cols + c] += g[c];
                }
            });
        }
        Op::StackRows(ids) => {
            let (_, cols) = out.rows_cols();
            for (r, &src) in ids.iter().enumerate() {
                if wants(src) {
                    add_into(grads, src, cols, |d| {
                        for c in 0..cols {
                            d[c] += g[r * cols + c];
                        }
                    });
                }
            }
        }
        Op::NormalizeRows(a, floor) => {
            let x = val(*a).data();
            let (rows, cols) = out.rows_cols();
            let y = out.data();
            add_into(grads, *a, rows * cols, |d| {
                for r in 0..rows {
                    let s = r * cols..(r + 1) * cols;
                    let n = norm(&x[s.clone()]);
                    if n < *floor {
                        for i in s {
                            d[i] += g[i] / floor;
                        }
                        continue;
                    }
                    let dot: f64 = g[s.clone()].iter().zip(&y[s.clone()]).map(|(a, b)| a * b).sum();
                    for i in s {
                        d[i] += (g[i] - y[i] * dot) / n;
                    }
                }
            });
        }
        Op::LogSumExpRows { m, skip_diagonal } => {
            let x = val(*m).data();
            let (rows, cols) = val(*m).rows_cols();
            let lse = out.data();
            add_into(grads, *m, rows * cols, |d| {
                for r in 0..rows {
                    for c in 0..cols {
                        if *skip_diagonal && r == c {
                            continue;
                        }
                        d[r * cols + c] += g[r] * (x[r * cols + c] - lse[r]).exp();
                    }
                }
            });
        }
        Op::SparseLeft(m, sp) => {
            let (_, cols) = val(*m).rows_cols();
            add_into(grads, *m, len(*m), |d| {
                for (r, entries) in sp.rows().iter().enumerate() {
                    let gr = &g[r * cols..(r + 1) * cols];
                    for &(j, w) in entries {
                        for (dst, gv) in d[j * cols..(j + 1) * cols].iter_mut().zip(gr) {
                            *dst += w * gv;
                        }
                    }
                }
            });
        }
        Op::Pick(m, idx) => {
            let (rows, cols) = val(*m).rows_cols();
            add_into(grads, *m, rows * cols, |d| {
                for (k, &(r, c)) in idx.iter().enumerate() {
                    d[r * cols + c] += g[k];
                }
            });
        }
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect())
        .expect("same shape")
}

fn row_log_softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    x.iter().map(|v| v - lse).collect()
}

impl<'t> Var<'t> {
    pub fn id(self) -> usize {
        self.id
    }

    pub fn tape(self) -> &'t Tape {
        self.tape
    }

    pub fn shape(self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn value(self) -> Tensor {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    /// First element; the value of a scalar.
    pub fn item(self) -> f64 {
        self.tape.nodes.borrow()[self.id].value.item()
    }

    fn with<R>(self, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id].value)
    }

    fn with2<R>(self, other: Var<'t>, f: impl FnOnce(&Tensor, &Tensor) -> R) -> R {
        let nodes = self.tape.nodes.borrow();
        f(&nodes[self.id].value, &nodes[other.id].value)
    }

    fn emit(self, value: Tensor, op: Op, inputs: &[usize]) -> Var<'t> {
        let rg = self.tape.requires(inputs);
        self.tape.push(value, op, rg)
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let value = self.with2(other, |a, b| {
            if a.rank() != 2 || b.rank() != 2 {
                return Err(Error::shape(
                    "matmul",
                    format!("rank-2 operands required, got {:?} and {:?}", a.shape(), b.shape()),
                ));
            }
            let (m, k) = a.rows_cols();
            let (k2, n) = b.rows_cols();
            if k != k2 {
                return Err(Error::shape(
                    "matmul",
                    format!("inner dimensions differ: {m}×{k} · {k2}×{n}"),
                ));
            }
            let mut out = vec![0.0; m * n];
            gemm_nn(a.data(), b.data(), &mut out, m, k, n);
            Tensor::new(vec![m, n], out)
        })?;
        Ok(self.emit(value, Op::MatMul(self.id, other.id), &[self.id, other.id]))
    }

    fn zip(self, other: Var<'t>, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.with2(other, |a, b| {
            if a.shape() != b.shape() {
                return Err(Error::shape(
                    op,
                    format!("{:?} vs {:?}", a.shape(), b.shape()),
                ));
            }
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(a.shape().to_vec(), data)
        })
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.zip(other, "add", |x, y| x + y)?;
        Ok(self.emit(v, Op::Add(self.id, other.id), &[self.id, other.id]))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.zip(other, "sub", |x, y| x - y)?;
        Ok(self.emit(v, Op::Sub(self.id, other.id), &[self.id, other.id]))
    }

    /// Elementwise (Hadamard) product.
    #[allow(clippy::should_implement_trait)]
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.zip(other, "mul", |x, y| x * y)?;
        Ok(self.emit(v, Op::Mul(self.id, other.id), &[self.id, other.id]))
    }

    pub fn square(self) -> Var<'t> {
        self.mul(self).expect("same shape")
    }

    pub fn mul_scalar(self, c: f64) -> Var<'t> {
        let v = self.with(|t| map(t, |x| c * x));
        self.emit(v, Op::Scale(self.id, c), &[self.id])
    }

    #[allow(clippy::should_implement_trait)]
    pub fn neg(self) -> Var<'t> {
        self.mul_scalar(-1.0)
    }

    /// Adds the vector `bias` to every row of `self`.
    pub fn add_row_bias(self, bias: Var<'t>) -> Result<Var<'t>> {
        self.add_scaled_row_bias(bias, None)
    }

    /// Adds `scales[r] * bias` to row `r` (plain bias when `scales` is None).
    pub fn add_scaled_row_bias(self, bias: Var<'t>, scales: Option<Vec<f64>>) -> Result<Var<'t>> {
        let value = self.with2(bias, |m, b| {
            let (rows, cols) = m.rows_cols();
            if b.numel() != cols || b.rank() > 1 {
                return Err(Error::shape(
                    "add_row_bias",
                    format!("bias {:?} vs matrix {:?}", b.shape(), m.shape()),
                ));
            }
            if scales.as_ref().is_some_and(|s| s.len() != rows) {
                return Err(Error::shape("add_row_bias", "one scale per row required"));
            }
            let mut data = m.data().to_vec();
            for r in 0..rows {
                let s = scales.as_ref().map_or(1.0, |s| s[r]);
                for c in 0..cols {
                    data[r * cols + c] += s * b.data()[c];
                }
            }
            Tensor::new(m.shape().to_vec(), data)
        })?;
        Ok(self.emit(
            value,
            Op::AddRowBias {
                m: self.id,
                b: bias.id,
                scales,
            },
            &[self.id, bias.id],
        ))
    }

    pub fn relu(self) -> Var<'t> {
        let v = self.with(|t| map(t, |x| x.max(0.0)));
        self.emit(v, Op::Relu(self.id), &[self.id])
    }

    pub fn sigmoid(self) -> Var<'t> {
        let v = self.with(|t| map(t, sigmoid));
        self.emit(v, Op::Sigmoid(self.id), &[self.id])
    }

    pub fn tanh(self) -> Var<'t> {
        let v = self.with(|t| map(t, f64::tanh));
        self.emit(v, Op::Tanh(self.id), &[self.id])
    }

    pub fn exp(self) -> Var<'t> {
        let v = self.with(|t| map(t, f64::exp));
        self.emit(v, Op::Exp(self.id), &[self.id])
    }

    /// Stable `ln(1 + e^x)`.
    pub fn softplus(self) -> Var<'t> {
        let v = self.with(|t| map(t, softplus));
        self.emit(v, Op::Softplus(self.id), &[self.id])
    }

    pub fn log(self) -> Result<Var<'t>> {
        let v = self.with(|t| {
            if let Some(bad) = t.data().iter().find(|&&x| x <= 0.0 || x.is_nan()) {
                return Err(Error::Domain {
                    op: "log",
                    detail: format!("non-positive input {bad}"),
                });
            }
            Ok(map(t, f64::ln))
        })?;
        Ok(self.emit(v, Op::Log(self.id), &[self.id]))
    }

    /// Concatenation along the last axis. Rank-2 operands must share their
    /// row count.
    pub fn concat(self, other: Var<'t>) -> Result<Var<'t>> {
        let value = self.with2(other, |a, b| {
            if a.rank() != b.rank() || a.rank() == 0 {
                return Err(Error::shape(
                    "concat",
                    format!("{:?} vs {:?}", a.shape(), b.shape()),
                ));
            }
            let (ra, p) = a.rows_cols();
            let (rb, q) = b.rows_cols();
            if ra != rb {
                return Err(Error::shape("concat", format!("row counts {ra} vs {rb}")));
            }
            let mut data = Vec::with_capacity(ra * (p + q));
            for r in 0..ra {
                data.extend_from_slice(&a.data()[r * p..(r + 1) * p]);
                data.extend_from_slice(&b.data()[r * q..(r + 1) * q]);
            }
            let shape = if a.rank() == 1 {
                vec![p + q]
            } else {
                vec![ra, p + q]
            };
            Tensor::new(shape, data)
        })?;
        Ok(self.emit(value, Op::Concat(self.id, other.id), &[self.id, other.id]))
    }

    /// `Z[i][j] = self[i] * other[j]`.
    pub fn outer(self, other: Var<'t>) -> Result<Var<'t>> {
        let value = self.with2(other, |h, g| {
            if h.rank() != 1 || g.rank() != 1 {
                return Err(Error::shape(
                    "outer",
                    format!("rank-1 operands required, got {:?} and {:?}", h.shape(), g.shape()),
                ));
            }
            let mut data = Vec::with_capacity(h.numel() * g.numel());
            for &x in h.data() {
                data.extend(g.data().iter().map(|&y| x * y));
            }
            Tensor::new(vec![h.numel(), g.numel()], data)
        })?;
        Ok(self.emit(value, Op::Outer(self.id, other.id), &[self.id, other.id]))
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Var<'t>> {
        let v = self.with(|t| t.clone().reshaped(shape))?;
        Ok(self.emit(v, Op::Reshape(self.id), &[self.id]))
    }

    /// Row-major flattening to rank 1.
    pub fn flatten(self) -> Var<'t> {
        let n = self.with(Tensor::numel);
        self.reshape(vec![n]).expect("element count preserved")
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        let v = self.with(|t| {
            if t.rank() != 2 {
                return Err(Error::shape("transpose", format!("{:?}", t.shape())));
            }
            let (r, c) = t.rows_cols();
            let mut data = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    data[j * r + i] = t.data()[i * c + j];
                }
            }
            Tensor::new(vec![c, r], data)
        })?;
        Ok(self.emit(v, Op::Transpose(self.id), &[self.id]))
    }

    /// Arithmetic mean over the rows of a `k×d` matrix.
    pub fn mean_rows(self) -> Result<Var<'t>> {
        let v = self.with(|t| {
            if t.rank() != 2 {
                return Err(Error::shape("mean_rows", format!("{:?}", t.shape())));
            }
            let (k, d) = t.rows_cols();
            if k == 0 {
                return Err(Error::EmptySet { op: "mean_rows" });
            }
            let mut out = vec![0.0; d];
            for r in 0..k {
                for (o, x) in out.iter_mut().zip(t.row(r)) {
                    *o += x;
                }
            }
            out.iter_mut().for_each(|o| *o /= k as f64);
            Ok(Tensor::vector(out))
        })?;
        Ok(self.emit(v, Op::MeanRows(self.id), &[self.id]))
    }

    pub fn sum(self) -> Var<'t> {
        let v = self.with(|t| Tensor::scalar(t.sum()));
        self.emit(v, Op::Sum(self.id), &[self.id])
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.with(Tensor::numel) as f64;
        self.sum().mul_scalar(1.0 / n)
    }

    /// `uᵀv / (‖u‖‖v‖)`; fails on a zero-norm operand.
    pub fn cosine_similarity(self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.with2(other, |u, v| {
            if u.numel() != v.numel() {
                return Err(Error::shape(
                    "cosine_similarity",
                    format!("{:?} vs {:?}", u.shape(), v.shape()),
                ));
            }
            let (nu, nv) = (norm(u.data()), norm(v.data()));
            if nu == 0.0 || nv == 0.0 {
                return Err(Error::Degenerate {
                    op: "cosine_similarity",
                    detail: "zero-norm operand".into(),
                });
            }
            let dot: f64 = u.data().iter().zip(v.data()).map(|(a, b)| a * b).sum();
            Ok(Tensor::scalar(dot / (nu * nv)))
        })?;
        Ok(self.emit(v, Op::Cosine(self.id, other.id), &[self.id, other.id]))
    }

    /// Softmax along the last axis (per row for matrices).
    pub fn softmax(self) -> Var<'t> {
        let v = self.with(|t| {
            let (rows, cols) = t.rows_cols();
            let mut data = Vec::with_capacity(t.numel());
            for r in 0..rows {
                data.extend(row_log_softmax(&t.data()[r * cols..(r + 1) * cols]).into_iter().map(f64::exp));
            }
            Tensor::new(t.shape().to_vec(), data).expect("same shape")
        });
        self.emit(v, Op::Softmax(self.id), &[self.id])
    }

    /// Log-softmax along the last axis (per row for matrices).
    pub fn log_softmax(self) -> Var<'t> {
        let v = self.with(|t| {
            let (rows, cols) = t.rows_cols();
            let mut data = Vec::with_capacity(t.numel());
            for r in 0..rows {
                data.extend(row_log_softmax(&t.data()[r * cols..(r + 1) * cols]));
            }
            Tensor::new(t.shape().to_vec(), data).expect("same shape")
        });
        self.emit(v, Op::LogSoftmax(self.id), &[self.id])
    }

    /// Selects rows `ids` (repeats allowed) of a matrix.
    pub fn gather_rows(self, ids: &[usize]) -> Result<Var<'t>> {
        let v = self.with(|t| {
            if t.rank() != 2 {
                return Err(Error::shape("gather_rows", format!("{:?}", t.shape())));
            }
            let (rows, cols) = t.rows_cols();
            let mut data = Vec::with_capacity(ids.len() * cols);
            for &i in ids {
                if i >= rows {
                    return Err(Error::Index {
                        op: "gather_rows",
                        index: i,
                        len: rows,
                    });
                }
                data.extend_from_slice(t.row(i));
            }
            Tensor::new(vec![ids.len(), cols], data)
        })?;
        Ok(self.emit(v, Op::GatherRows(self.id, ids.to_vec()), &[self.id]))
    }

    /// Row `i` of a matrix as a rank-1 vector.
    pub fn row(self, i: usize) -> Result<Var<'t>> {
        let v = self.with(|t| {
            if t.rank() != 2 {
                return Err(Error::shape("row", format!("{:?}", t.shape())));
            }
            let (rows, _) = t.rows_cols();
            if i >= rows {
                return Err(Error::Index {
                    op: "row",
                    index: i,
                    len: rows,
                });
            }
            Ok(Tensor::vector(t.row(i).to_vec()))
        })?;
        Ok(self.emit(v, Op::Row(self.id, i), &[self.id]))
    }

    /// Stacks equally sized vectors into a matrix, one per row.
    pub fn stack_rows(rows: &[Var<'t>]) -> Result<Var<'t>> {
        let first = *rows.first().ok_or(Error::EmptySet { op: "stack_rows" })?;
        let tape = first.tape;
        let value = {
            let nodes = tape.nodes.borrow();
            let cols = nodes[first.id].value.numel();
            let mut data = Vec::with_capacity(rows.len() * cols);
            for r in rows {
                let t = &nodes[r.id].value;
                if t.numel() != cols || t.rank() > 1 {
                    return Err(Error::shape(
                        "stack_rows",
                        format!("row shape {:?}, expected [{cols}]", t.shape()),
                    ));
                }
                data.extend_from_slice(t.data());
            }
            Tensor::new(vec![rows.len(), cols], data)?
        };
        let ids: Vec<usize> = rows.iter().map(|r| r.id).collect();
        let rg = tape.requires(&ids);
        Ok(tape.push(value, Op::StackRows(ids), rg))
    }

    /// Scales every row to unit L2 norm; fails on a zero row.
    pub fn normalize_rows(self) -> Result<Var<'t>> {
        self.normalize_rows_impl(0.0)
    }

    /// Rows divided by `max(‖row‖, floor)`; never fails on a zero row.
    pub fn normalize_rows_floored(self, floor: f64) -> Result<Var<'t>> {
        if floor.is_nan() || floor <= 0.0 {
            return Err(Error::Domain {
                op: "normalize_rows_floored",
                detail: format!("floor must be positive, got {floor}"),
            });
        }
        self.normalize_rows_impl(floor)
    }

    fn normalize_rows_impl(self, floor: f64) -> Result<Var<'t>> {
        let v = self.with(|t| {
            let (rows, cols) = t.rows_cols();
            let mut data = t.data().to_vec();
            for r in 0..rows {
                let row = &mut data[r * cols..(r + 1) * cols];
                let n = norm(row);
                if n == 0.0 && floor == 0.0 {
                    return Err(Error::Degenerate {
                        op: "normalize_rows",
                        detail: format!("row {r} has zero norm"),
                    });
                }
                let n = n.max(floor);
                row.iter_mut().for_each(|x| *x /= n);
            }
            Tensor::new(t.shape().to_vec(), data)
        })?;
        Ok(self.emit(v, Op::NormalizeRows(self.id, floor), &[self.id]))
    }

    /// Per-row `ln Σ_j exp(m[r][j])`, optionally leaving out `j == r`.
    pub fn logsumexp_rows(self, skip_diagonal: bool) -> Result<Var<'t>> {
        let v = self.with(|t| {
            let (rows, cols) = t.rows_cols();
            if skip_diagonal && rows != cols {
                return Err(Error::shape("logsumexp_rows", "diagonal skip needs a square matrix"));
            }
            let mut out = Vec::with_capacity(rows);
            for r in 0..rows {
                let terms = t.row(r).iter().enumerate().filter(|(c, _)| !(skip_diagonal && *c == r));
                let max = terms.clone().map(|(_, &x)| x).fold(f64::NEG_INFINITY, f64::max);
                if max == f64::NEG_INFINITY {
                    return Err(Error::EmptySet { op: "logsumexp_rows" });
                }
                let s: f64 = terms.map(|(_, &x)| (x - max).exp()).sum();
                out.push(max + s.ln());
            }
            Ok(Tensor::vector(out))
        })?;
        Ok(self.emit(
            v,
            Op::LogSumExpRows {
                m: self.id,
                skip_diagonal,
            },
            &[self.id],
        ))
    }

    /// Picks `m[r][c]` for each `(r, c)` into a vector.
    pub fn pick(self, idx: &[(usize, usize)]) -> Result<Var<'t>> {
        let v = self.with(|t| {
            let (rows, cols) = t.rows_cols();
            let mut out = Vec::with_capacity(idx.len());
            for &(r, c) in idx {
                if r >= rows || c >= cols {
                    return Err(Error::Index {
                        op: "pick",
                        index: r * cols + c,
                        len: rows * cols,
                    });
                }
                out.push(t.data()[r * cols + c]);
            }
            Ok(Tensor::vector(out))
        })?;
        Ok(self.emit(v, Op::Pick(self.id, idx.to_vec()), &[self.id]))
    }

    /// Constant sparse left product `sp · self`.
    pub fn sparse_left_mul(self, sp: SparseMatrix) -> Result<Var<'t>> {
        let v = self.with(|t| {
            let (rows, cols) = t.rows_cols();
            if t.rank() != 2 || sp.n_cols() != rows {
                return Err(Error::shape(
                    "sparse_left_mul",
                    format!("{} columns against {:?}", sp.n_cols(), t.shape()),
                ));
            }
            let mut data = vec![0.0; sp.n_rows() * cols];
            for (r, entries) in sp.rows().iter().enumerate() {
                let out = &mut data[r * cols..(r + 1) * cols];
                for &(j, w) in entries {
                    for (o, x) in out.iter_mut().zip(t.row(j)) {
                        *o += w * x;
                    }
                }
            }
            Tensor::new(vec![sp.n_rows(), cols], data)
        })?;
        Ok(self.emit(v, Op::SparseLeft(self.id, sp), &[self.id]))
    }
}
