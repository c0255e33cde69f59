//! Dense row-major `f64` tensors, a reverse-mode tape over them, and Adam.
//!
//! Parameters live outside the tape as [`Param`]s. Each training step binds
//! them onto a fresh [`Tape`] as leaves, runs forward and backward, then pulls
//! the leaf gradients back into `Param::grad` before the optimizer step.

mod adam;
pub mod checkpoint;
pub mod gradcheck;
mod init;
mod kernels;
mod tape;

pub use adam::AdamState;
pub use init::uniform_init;
pub use tape::{Tape, Var};

use crate::error::{Error, Result};

/// Dense tensor of rank 0, 1 or 2, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "Tensor::new",
                format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    /// Builds a `rows × cols` matrix from nested rows.
    pub fn matrix(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("Tensor::matrix", "ragged rows"));
        }
        Ok(Tensor {
            shape: vec![rows.len(), cols],
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// `(rows, cols)` view; rank-1 tensors are a single row, scalars are 1×1.
    pub fn rows_cols(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [] => (1, 1),
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => unreachable!("rank > 2 is never constructed"),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let (_, c) = self.rows_cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn get2(&self, i: usize, j: usize) -> f64 {
        let (_, c) = self.rows_cols();
        self.data[i * c + j]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() || shape.len() > 2 {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Row-wise sparse matrix with column indices checked at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    n_cols: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseMatrix {
    pub fn new(n_cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        for entries in &rows {
            if let Some(&(j, _)) = entries.iter().find(|(j, _)| *j >= n_cols) {
                return Err(Error::Index {
                    op: "SparseMatrix::new",
                    index: j,
                    len: n_cols,
                });
            }
        }
        Ok(SparseMatrix { n_cols, rows })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(&[self.n_rows(), self.n_cols]);
        for (r, entries) in self.rows.iter().enumerate() {
            for &(j, w) in entries {
                t.data[r * self.n_cols + j] += w;
            }
        }
        t
    }
}

/// A trainable tensor with its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn accumulate(&mut self, grad: &Tensor) {
        debug_assert_eq!(grad.numel(), self.grad.numel());
        for (g, d) in self.grad.data.iter_mut().zip(&grad.data) {
            *g += d;
        }
    }
}

/// A group of named parameters, visited in a fixed order.
pub trait ParamSet {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Param));
    fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(&str, &'a mut Param));

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        self.visit_mut(&mut |_, p| out.push(p));
        out
    }

    fn zero_grad(&mut self) {
        self.visit_mut(&mut |_, p| p.zero_grad());
    }
}

/// Binds every parameter of `set` onto `tape` as a leaf, in visit order.
pub fn bind_params<'t>(set: &impl ParamSet, tape: &'t Tape) -> Vec<Var<'t>> {
    let mut out = Vec::new();
    set.visit(&mut |_, p| out.push(tape.leaf(p.value.clone())));
    out
}

/// Binds every parameter as a constant: forward passes only.
pub fn bind_frozen<'t>(set: &impl ParamSet, tape: &'t Tape) -> Vec<Var<'t>> {
    let mut out = Vec::new();
    set.visit(&mut |_, p| out.push(tape.constant(p.value.clone())));
    out
}

/// Adds the gradients of leaves made by [`bind_params`] into `set`.
pub fn pull_grads(set: &mut impl ParamSet, tape: &Tape, vars: &[Var<'_>]) {
    let mut it = vars.iter();
    set.visit_mut(&mut |_, p| {
        let v = it.next().expect("vars come from bind_params on the same set");
        p.accumulate(&tape.grad(*v));
    });
}
