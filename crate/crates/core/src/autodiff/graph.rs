//! Define-by-run computation graph.
//!
//! Nodes are appended in evaluation order, so a node's inputs always have
//! smaller indices and the node list is already a topological order. Values
//! are computed when a node is created; [`Graph::rebind`] followed by
//! [`Graph::recompute`] replays the whole tape against new leaf values.

use alloc::vec;
use alloc::vec::Vec;

use super::tensor::{matmul_acc, matmul_nt_acc, matmul_tn_acc, Tensor};
use crate::error::{Error, Result};
use crate::math::{log_sigmoid_unchecked, sigmoid};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Exp(Var),
    Log(Var),
    Powf(Var, f64),
    Tanh(Var),
    LogSigmoid(Var),
    Softmax(Var),
    LogSoftmax(Var),
    CausalSoftmax(Var),
    RmsNorm(Var, f64),
    SelectRows(Var, Vec<usize>),
    Gather(Var, Vec<(usize, usize)>),
    Sum(Var),
    Mean(Var),
    SumRange(Var, usize, usize),
    StopGradient(Var),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Reverse-mode tape. One graph per training step; dropped after backward.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Graph::backward`], indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    adjoints: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`; zeros when no path
    /// reaches `v` (including paths cut by a stop-gradient).
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.adjoints[v.0] {
            Some(t) => t.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.adjoints[v.0].as_ref()
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn need_matrix(op: &'static str, a: &Tensor) -> Result<(usize, usize)> {
    match a.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::ShapeMismatch {
            op,
            lhs: s.to_vec(),
            rhs: vec![0, 0],
        }),
    }
}

fn map(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    a.with_data(a.data().iter().map(|&x| f(x)).collect())
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    a.with_data(
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect(),
    )
}

fn row_softmax(row: &[f64], out: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        *o = libm::exp(x - m);
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
    }
}

fn row_log_softmax(row: &[f64], out: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for &x in row {
        s += libm::exp(x - m);
    }
    let lse = m + libm::log(s);
    for (o, &x) in out.iter_mut().zip(row) {
        *o = x - lse;
    }
}

fn sum_ordered(xs: &[f64]) -> f64 {
    let mut s = 0.0;
    for &x in xs {
        s += x;
    }
    s
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Current value of a node.
    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Alias of [`Graph::value`] for the root of a computation.
    pub fn forward(&self, root: Var) -> &Tensor {
        self.value(root)
    }

    pub fn scalar_value(&self, v: Var) -> Option<f64> {
        self.value(v).item()
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Differentiable input.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t, true)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Constant, t, false)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    /// Replace the value of a leaf or constant; call [`Graph::recompute`]
    /// afterwards to refresh downstream values.
    pub fn rebind(&mut self, v: Var, t: Tensor) -> Result<()> {
        let node = &mut self.nodes[v.0];
        if !matches!(node.op, Op::Leaf | Op::Constant) {
            return Err(Error::domain("only leaves and constants can be rebound"));
        }
        if node.value.shape() != t.shape() {
            return Err(mismatch("rebind", &node.value, &t));
        }
        node.value = t;
        Ok(())
    }

    /// Re-evaluate every non-leaf node in tape order.
    pub fn recompute(&mut self) {
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Leaf | Op::Constant) {
                continue;
            }
            let op = self.nodes[i].op.clone();
            // Shapes were validated when the node was created and rebinding
            // preserves shapes, so evaluation cannot fail here.
            let value = self.eval(&op).expect("shape-checked at construction");
            self.nodes[i].value = value;
        }
    }

    fn add_op(&mut self, op: Op) -> Result<Var> {
        let value = self.eval(&op)?;
        let requires_grad = match &op {
            Op::Leaf => true,
            Op::Constant | Op::StopGradient(_) => false,
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::MatMul(a, b)
            | Op::MatMulNT(a, b) => self.rg(*a) || self.rg(*b),
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Powf(a, _)
            | Op::Tanh(a)
            | Op::LogSigmoid(a)
            | Op::Softmax(a)
            | Op::LogSoftmax(a)
            | Op::CausalSoftmax(a)
            | Op::RmsNorm(a, _)
            | Op::SelectRows(a, _)
            | Op::Gather(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SumRange(a, _, _) => self.rg(*a),
        };
        Ok(self.push(op, value, requires_grad))
    }

    fn eval(&self, op: &Op) -> Result<Tensor> {
        let val = |v: &Var| &self.nodes[v.0].value;
        Ok(match op {
            Op::Leaf | Op::Constant => unreachable!("inputs are never re-evaluated"),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                let (x, y) = (val(a), val(b));
                if x.shape() != y.shape() {
                    let name = match op {
                        Op::Add(..) => "add",
                        Op::Sub(..) => "sub",
                        _ => "mul",
                    };
                    return Err(mismatch(name, x, y));
                }
                match op {
                    Op::Add(..) => zip(x, y, |p, q| p + q),
                    Op::Sub(..) => zip(x, y, |p, q| p - q),
                    _ => zip(x, y, |p, q| p * q),
                }
            }
            Op::Neg(a) => map(val(a), |x| -x),
            Op::Scale(a, c) => map(val(a), |x| x * c),
            Op::AddRow(a, b) => {
                let (x, bias) = (val(a), val(b));
                let (_, cols) = need_matrix("add_row", x)?;
                if bias.shape() != [cols] {
                    return Err(mismatch("add_row", x, bias));
                }
                let mut out = x.data().to_vec();
                for row in out.chunks_mut(cols) {
                    for (o, b) in row.iter_mut().zip(bias.data()) {
                        *o += b;
                    }
                }
                x.with_data(out)
            }
            Op::MatMul(a, b) => {
                let (x, y) = (val(a), val(b));
                let (m, k) = need_matrix("matmul", x)?;
                let (k2, n) = need_matrix("matmul", y)?;
                if k != k2 {
                    return Err(mismatch("matmul", x, y));
                }
                let mut out = vec![0.0; m * n];
                matmul_acc(x.data(), y.data(), &mut out, m, k, n);
                Tensor::matrix(m, n, out)?
            }
            Op::MatMulNT(a, b) => {
                let (x, y) = (val(a), val(b));
                let (m, k) = need_matrix("matmul_nt", x)?;
                let (n, k2) = need_matrix("matmul_nt", y)?;
                if k != k2 {
                    return Err(mismatch("matmul_nt", x, y));
                }
                let mut out = vec![0.0; m * n];
                matmul_nt_acc(x.data(), y.data(), &mut out, m, k, n);
                Tensor::matrix(m, n, out)?
            }
            Op::Exp(a) => map(val(a), libm::exp),
            Op::Log(a) => map(val(a), libm::log),
            Op::Powf(a, p) => map(val(a), |x| libm::pow(x, *p)),
            Op::Tanh(a) => map(val(a), libm::tanh),
            Op::LogSigmoid(a) => map(val(a), log_sigmoid_unchecked),
            Op::Softmax(a) | Op::LogSoftmax(a) | Op::CausalSoftmax(a) => {
                let x = val(a);
                let (rows, cols) = x.dims2().ok_or_else(|| mismatch("softmax", x, x))?;
                let mut out = vec![0.0; rows * cols];
                for r in 0..rows {
                    let src = &x.data()[r * cols..(r + 1) * cols];
                    let dst = &mut out[r * cols..(r + 1) * cols];
                    match op {
                        Op::Softmax(_) => row_softmax(src, dst),
                        Op::LogSoftmax(_) => row_log_softmax(src, dst),
                        _ => {
                            // row r attends to columns 0..=r
                            let keep = (r + 1).min(cols);
                            row_softmax(&src[..keep], &mut dst[..keep]);
                        }
                    }
                }
                x.with_data(out)
            }
            Op::RmsNorm(a, eps) => {
                let x = val(a);
                let (rows, cols) = x.dims2().ok_or_else(|| mismatch("rms_norm", x, x))?;
                let mut out = vec![0.0; rows * cols];
                for r in 0..rows {
                    let src = &x.data()[r * cols..(r + 1) * cols];
                    let ms =
                        sum_ordered(&src.iter().map(|v| v * v).collect::<Vec<_>>()) / cols as f64;
                    let inv = 1.0 / libm::sqrt(ms + eps);
                    for (o, v) in out[r * cols..(r + 1) * cols].iter_mut().zip(src) {
                        *o = v * inv;
                    }
                }
                x.with_data(out)
            }
            Op::SelectRows(a, ids) => {
                let table = val(a);
                let (rows, cols) = need_matrix("select_rows", table)?;
                let mut out = Vec::with_capacity(ids.len() * cols);
                for &i in ids {
                    if i >= rows {
                        return Err(Error::ShapeMismatch {
                            op: "select_rows",
                            lhs: table.shape().to_vec(),
                            rhs: vec![i],
                        });
                    }
                    out.extend_from_slice(&table.data()[i * cols..(i + 1) * cols]);
                }
                Tensor::matrix(ids.len(), cols, out)?
            }
            Op::Gather(a, idx) => {
                let x = val(a);
                let (rows, cols) = need_matrix("gather", x)?;
                let mut out = Vec::with_capacity(idx.len());
                for &(r, c) in idx {
                    if r >= rows || c >= cols {
                        return Err(Error::ShapeMismatch {
                            op: "gather",
                            lhs: x.shape().to_vec(),
                            rhs: vec![r, c],
                        });
                    }
                    out.push(x.data()[r * cols + c]);
                }
                Tensor::vector(out)
            }
            Op::Sum(a) => Tensor::scalar(sum_ordered(val(a).data())),
            Op::Mean(a) => {
                let x = val(a);
                Tensor::scalar(sum_ordered(x.data()) / x.numel() as f64)
            }
            Op::SumRange(a, start, len) => {
                let x = val(a);
                if start + len > x.numel() {
                    return Err(Error::ShapeMismatch {
                        op: "sum_range",
                        lhs: x.shape().to_vec(),
                        rhs: vec![*start, *len],
                    });
                }
                Tensor::scalar(sum_ordered(&x.data()[*start..start + len]))
            }
            Op::StopGradient(a) => val(a).clone(),
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.add_op(Op::Add(a, b))
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.add_op(Op::Sub(a, b))
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.add_op(Op::Mul(a, b))
    }
    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.add_op(Op::Neg(a))
    }
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.add_op(Op::Scale(a, c))
    }
    /// `a[n,m] + bias[m]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        self.add_op(Op::AddRow(a, bias))
    }
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.add_op(Op::MatMul(a, b))
    }
    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.add_op(Op::MatMulNT(a, b))
    }
    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.add_op(Op::Exp(a))
    }
    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.add_op(Op::Log(a))
    }
    pub fn powf(&mut self, a: Var, p: f64) -> Result<Var> {
        self.add_op(Op::Powf(a, p))
    }
    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.add_op(Op::Tanh(a))
    }
    pub fn log_sigmoid(&mut self, a: Var) -> Result<Var> {
        self.add_op(Op::LogSigmoid(a))
    }
    /// Row-wise softmax of a matrix (or of a vector as a single row).
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.add_op(Op::Softmax(a))
    }
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        self.add_op(Op::LogSoftmax(a))
    }
    /// Row-wise softmax where row `i` only sees columns `0..=i`; masked
    /// entries are exactly zero.
    pub fn causal_softmax(&mut self, a: Var) -> Result<Var> {
        self.add_op(Op::CausalSoftmax(a))
    }
    /// Row-wise `x / sqrt(mean(x²) + eps)`.
    pub fn rms_norm(&mut self, a: Var, eps: f64) -> Result<Var> {
        self.add_op(Op::RmsNorm(a, eps))
    }
    /// Rows `ids` of a `[rows, cols]` table, as an `[ids.len(), cols]` matrix.
    pub fn select_rows(&mut self, table: Var, ids: Vec<usize>) -> Result<Var> {
        self.add_op(Op::SelectRows(table, ids))
    }
    /// Vector of `a[r, c]` for each `(r, c)`.
    pub fn gather(&mut self, a: Var, idx: Vec<(usize, usize)>) -> Result<Var> {
        self.add_op(Op::Gather(a, idx))
    }
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.add_op(Op::Sum(a))
    }
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.add_op(Op::Mean(a))
    }
    /// Sum of the flat elements `start..start + len`.
    pub fn sum_range(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        self.add_op(Op::SumRange(a, start, len))
    }
    /// Same value as `a`; no gradient flows back through it.
    pub fn stop_gradient(&mut self, a: Var) -> Result<Var> {
        self.add_op(Op::StopGradient(a))
    }

    /// Accumulate `d root / d node` for every node that requires a gradient.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_val = self.value(root);
        if !root_val.is_scalar() {
            return Err(Error::NonScalarRoot(root_val.shape().to_vec()));
        }
        let n = root.0 + 1;
        let mut adj: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        adj[root.0] = Some(root_val.with_data(vec![1.0]));

        for i in (0..n).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.propagate(&node.op, &node.value, &g, &mut adj);
            }
            adj[i] = Some(g);
        }

        Ok(Gradients {
            adjoints: adj,
            shapes: self
                .nodes
                .iter()
                .map(|n| n.value.shape().to_vec())
                .collect(),
        })
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &Tensor, adj: &mut [Option<Tensor>]) {
        let val = |v: &Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, d: &[f64]| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut adj[v.0] {
                Some(t) => t.add_assign(d),
                slot @ None => *slot = Some(self.nodes[v.0].value.with_data(d.to_vec())),
            }
        };
        let gd = g.data();
        match op {
            Op::Leaf | Op::Constant | Op::StopGradient(_) => {}
            Op::Add(a, b) => {
                acc(*a, gd);
                acc(*b, gd);
            }
            Op::Sub(a, b) => {
                acc(*a, gd);
                let neg: Vec<f64> = gd.iter().map(|x| -x).collect();
                acc(*b, &neg);
            }
            Op::Mul(a, b) => {
                let da: Vec<f64> = gd.iter().zip(val(b).data()).map(|(g, y)| g * y).collect();
                let db: Vec<f64> = gd.iter().zip(val(a).data()).map(|(g, x)| g * x).collect();
                acc(*a, &da);
                acc(*b, &db);
            }
            Op::Neg(a) => {
                let d: Vec<f64> = gd.iter().map(|x| -x).collect();
                acc(*a, &d);
            }
            Op::Scale(a, c) => {
                let d: Vec<f64> = gd.iter().map(|x| x * c).collect();
                acc(*a, &d);
            }
            Op::AddRow(a, b) => {
                acc(*a, gd);
                let cols = val(b).numel();
                let mut db = vec![0.0; cols];
                for row in gd.chunks(cols) {
                    for (d, x) in db.iter_mut().zip(row) {
                        *d += x;
                    }
                }
                acc(*b, &db);
            }
            Op::MatMul(a, b) => {
                let (x, y) = (val(a), val(b));
                let (m, k) = x.dims2().unwrap();
                let (_, n) = y.dims2().unwrap();
                if self.nodes[a.0].requires_grad {
                    let mut da = vec![0.0; m * k];
                    matmul_nt_acc(gd, y.data(), &mut da, m, n, k);
                    acc(*a, &da);
                }
                if self.nodes[b.0].requires_grad {
                    let mut db = vec![0.0; k * n];
                    matmul_tn_acc(x.data(), gd, &mut db, m, k, n);
                    acc(*b, &db);
                }
            }
            Op::MatMulNT(a, b) => {
                let (x, y) = (val(a), val(b));
                let (m, k) = x.dims2().unwrap();
                let (n, _) = y.dims2().unwrap();
                if self.nodes[a.0].requires_grad {
                    let mut da = vec![0.0; m * k];
                    matmul_acc(gd, y.data(), &mut da, m, n, k);
                    acc(*a, &da);
                }
                if self.nodes[b.0].requires_grad {
                    let mut db = vec![0.0; n * k];
                    matmul_tn_acc(gd, x.data(), &mut db, m, n, k);
                    acc(*b, &db);
                }
            }
            Op::Exp(a) => {
                let d: Vec<f64> = gd.iter().zip(out.data()).map(|(g, y)| g * y).collect();
                acc(*a, &d);
            }
            Op::Log(a) => {
                let d: Vec<f64> = gd.iter().zip(val(a).data()).map(|(g, x)| g / x).collect();
                acc(*a, &d);
            }
            Op::Powf(a, p) => {
                let d: Vec<f64> = gd
                    .iter()
                    .zip(val(a).data())
                    .map(|(g, x)| g * p * libm::pow(*x, p - 1.0))
                    .collect();
                acc(*a, &d);
            }
            Op::Tanh(a) => {
                let d: Vec<f64> = gd
                    .iter()
                    .zip(out.data())
                    .map(|(g, y)| g * (1.0 - y * y))
                    .collect();
                acc(*a, &d);
            }
            Op::LogSigmoid(a) => {
                let d: Vec<f64> = gd
                    .iter()
                    .zip(val(a).data())
                    .map(|(g, x)| g * sigmoid(-x))
                    .collect();
                acc(*a, &d);
            }
            Op::Softmax(a) | Op::CausalSoftmax(a) => {
                let (rows, cols) = out.dims2().unwrap();
                let mut d = vec![0.0; rows * cols];
                for r in 0..rows {
                    let y = &out.data()[r * cols..(r + 1) * cols];
                    let gr = &gd[r * cols..(r + 1) * cols];
                    let dot =
                        sum_ordered(&y.iter().zip(gr).map(|(a, b)| a * b).collect::<Vec<_>>());
                    for c in 0..cols {
                        d[r * cols + c] = y[c] * (gr[c] - dot);
                    }
                }
                acc(*a, &d);
            }
            Op::LogSoftmax(a) => {
                let (rows, cols) = out.dims2().unwrap();
                let mut d = vec![0.0; rows * cols];
                for r in 0..rows {
                    let y = &out.data()[r * cols..(r + 1) * cols];
                    let gr = &gd[r * cols..(r + 1) * cols];
                    let gs = sum_ordered(gr);
                    for c in 0..cols {
                        d[r * cols + c] = gr[c] - libm::exp(y[c]) * gs;
                    }
                }
                acc(*a, &d);
            }
            Op::RmsNorm(a, eps) => {
                let x = val(a);
                let (rows, cols) = x.dims2().unwrap();
                let mut d = vec![0.0; rows * cols];
                for r in 0..rows {
                    let xr = &x.data()[r * cols..(r + 1) * cols];
                    let y = &out.data()[r * cols..(r + 1) * cols];
                    let gr = &gd[r * cols..(r + 1) * cols];
                    let ms =
                        sum_ordered(&xr.iter().map(|v| v * v).collect::<Vec<_>>()) / cols as f64;
                    let inv = 1.0 / libm::sqrt(ms + eps);
                    let dot =
                        sum_ordered(&y.iter().zip(gr).map(|(a, b)| a * b).collect::<Vec<_>>())
                            / cols as f64;
                    for c in 0..cols {
                        d[r * cols + c] = (gr[c] - y[c] * dot) * inv;
                    }
                }
                acc(*a, &d);
            }
            Op::SelectRows(a, ids) => {
                let table = val(a);
                let (rows, cols) = table.dims2().unwrap();
                let mut d = vec![0.0; rows * cols];
                for (k, &i) in ids.iter().enumerate() {
                    for c in 0..cols {
                        d[i * cols + c] += gd[k * cols + c];
                    }
                }
                acc(*a, &d);
            }
            Op::Gather(a, idx) => {
                let x = val(a);
                let (_, cols) = x.dims2().unwrap();
                let mut d = vec![0.0; x.numel()];
                for (k, &(r, c)) in idx.iter().enumerate() {
                    d[r * cols + c] += gd[k];
                }
                acc(*a, &d);
            }
            Op::Sum(a) => {
                let d = vec![gd[0]; val(a).numel()];
                acc(*a, &d);
            }
            Op::Mean(a) => {
                let n = val(a).numel();
                let d = vec![gd[0] / n as f64; n];
                acc(*a, &d);
            }
            Op::SumRange(a, start, len) => {
                let mut d = vec![0.0; val(a).numel()];
                for x in &mut d[*start..start + len] {
                    *x = gd[0];
                }
                acc(*a, &d);
            }
        }
    }
}
