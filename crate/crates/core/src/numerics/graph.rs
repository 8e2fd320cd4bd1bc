//! Define-by-run reverse-mode tape over rank-2 tensors.
//!
//! Each op is evaluated as it is recorded and its output cached, so the tape
//! is always in topological order and [`ComputeGraph::gradient`] is a single
//! reverse sweep.

use std::sync::Arc;

use crate::error::{Error, Result};

use super::{Csr, Gradients, ParamId, ParamSet, Tensor};

/// Lower clamp applied to the argument of [`ComputeGraph::ln`].
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Param(ParamId),
    Constant,
    MatMul(Var, Var),
    SpMM(Arc<Csr>, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    RowSoftmax(Var),
    Transpose(Var),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Flatten(Var),
    Sum(Var),
    Ln(Var),
}

struct Node {
    op: Op,
    // `None` for parameter leaves, which read from the borrowed set.
    value: Option<Tensor>,
}

pub struct ComputeGraph<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

impl<'p> ComputeGraph<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        ComputeGraph { params, nodes: Vec::new(), param_vars: vec![None; params.len()] }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Cached forward value of `v`.
    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.op, &node.value) {
            (Op::Param(id), _) => self.params.get(*id),
            (_, Some(t)) => t,
            _ => unreachable!("non-leaf node without value"),
        }
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value: Some(value) });
        Var(self.nodes.len() - 1)
    }

    /// Leaf for a trainable parameter. Repeated calls return the same leaf.
    pub fn param(&mut self, id: ParamId) -> Result<Var> {
        if let Some(v) = self.param_vars[id.0] {
            return Ok(v);
        }
        if !self.params.get(id).is_finite() {
            return Err(Error::NonFinite { op: "param" });
        }
        self.nodes.push(Node { op: Op::Param(id), value: None });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        Ok(v)
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "constant" });
        }
        Ok(self.push(Op::Constant, value))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), out))
    }

    /// Sparse constant times dense variable.
    pub fn spmm(&mut self, a: &Arc<Csr>, x: Var) -> Result<Var> {
        let out = a.matmul(self.value(x))?;
        Ok(self.push(Op::SpMM(Arc::clone(a), x), out))
    }

    fn check_same(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.same_shape(tb) {
            return Err(Error::shape(op, format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("add", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(Op::Add(a, b), out))
    }

    /// Adds a `1 x n` row to every row of an `m x n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(Error::shape("add_row", format!("{:?} + {:?}", ta.shape(), tr.shape())));
        }
        let n = ta.cols();
        let mut out = ta.clone();
        for chunk in out.data_mut().chunks_mut(n) {
            for (o, &b) in chunk.iter_mut().zip(tr.data()) {
                *o += b;
            }
        }
        Ok(self.push(Op::AddRow(a, row), out))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("mul", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(Op::Mul(a, b), out))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x * factor);
        Ok(self.push(Op::Scale(a, factor), out))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(sigmoid);
        Ok(self.push(Op::Sigmoid(a), out))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::tanh);
        Ok(self.push(Op::Tanh(a), out))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x.max(0.0));
        Ok(self.push(Op::Relu(a), out))
    }

    /// Softmax over each row, max-shifted.
    pub fn row_softmax(&mut self, a: Var) -> Result<Var> {
        let out = row_softmax(self.value(a));
        Ok(self.push(Op::RowSoftmax(a), out))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose();
        Ok(self.push(Op::Transpose(a), out))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::shape("concat_rows", "no inputs"))?;
        let cols = self.value(first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(Error::shape("concat_rows", format!("{} vs {cols} columns", t.cols())));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor::matrix(rows, cols, data)?;
        Ok(self.push(Op::ConcatRows(parts.to_vec()), out))
    }

    /// Selects rows by index; repeats allowed.
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if rows.is_empty() {
            return Err(Error::shape("gather_rows", "no rows selected"));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= t.rows()) {
            return Err(Error::NodeOutOfRange { id: bad, n_nodes: t.rows() });
        }
        let mut data = Vec::with_capacity(rows.len() * t.cols());
        for &r in rows {
            data.extend_from_slice(t.row(r));
        }
        let out = Tensor::matrix(rows.len(), t.cols(), data)?;
        Ok(self.push(Op::GatherRows(a, rows.to_vec()), out))
    }

    /// Row-major flatten to `1 x (rows * cols)`.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let out = t.clone().reshaped(vec![1, t.len()])?;
        Ok(self.push(Op::Flatten(a), out))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        Ok(self.push(Op::Sum(a), out))
    }

    /// Natural log with the argument clamped to at least [`LOG_CLAMP`].
    pub fn ln(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x.max(LOG_CLAMP).ln());
        Ok(self.push(Op::Ln(a), out))
    }

    /// Reverse sweep from a scalar root. Parameters that do not influence the
    /// root get zero gradients.
    pub fn gradient(&self, root: Var) -> Result<Gradients> {
        let root_value = self.value(root);
        if !root_value.is_scalar() {
            return Err(Error::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::new();
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(Tensor::new(root_value.shape().to_vec(), vec![1.0])?);

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Param(_) | Op::Constant => {
                    grads[idx] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul_nt(self.value(*b))?;
                    let gb = self.value(*a).matmul_tn(&g)?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::SpMM(csr, x) => {
                    accumulate(&mut grads, *x, csr.matmul_transposed(&g)?);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::AddRow(a, row) => {
                    let n = g.cols();
                    let mut gr = vec![0.0; n];
                    for chunk in g.data().chunks(n) {
                        for (s, &v) in gr.iter_mut().zip(chunk) {
                            *s += v;
                        }
                    }
                    accumulate(&mut grads, *row, Tensor::matrix(1, n, gr)?);
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y);
                    let gb = g.zip_map(self.value(*a), |x, y| x * y);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(a, f) => {
                    accumulate(&mut grads, *a, g.map(|x| x * f));
                }
                Op::Sigmoid(a) => {
                    let y = node.value.as_ref().unwrap();
                    accumulate(&mut grads, *a, g.zip_map(y, |gv, s| gv * s * (1.0 - s)));
                }
                Op::Tanh(a) => {
                    let y = node.value.as_ref().unwrap();
                    accumulate(&mut grads, *a, g.zip_map(y, |gv, t| gv * (1.0 - t * t)));
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    accumulate(&mut grads, *a, g.zip_map(x, |gv, xv| if xv > 0.0 { gv } else { 0.0 }));
                }
                Op::RowSoftmax(a) => {
                    let y = node.value.as_ref().unwrap();
                    let n = y.cols();
                    let mut gx = g.clone();
                    for ((gx_row, g_row), y_row) in
                        gx.data_mut().chunks_mut(n).zip(g.data().chunks(n)).zip(y.data().chunks(n))
                    {
                        let dot: f64 = g_row.iter().zip(y_row).map(|(a, b)| a * b).sum();
                        for ((o, &gv), &yv) in gx_row.iter_mut().zip(g_row).zip(y_row) {
                            *o = yv * (gv - dot);
                        }
                    }
                    accumulate(&mut grads, *a, gx);
                }
                Op::Transpose(a) => {
                    accumulate(&mut grads, *a, g.transpose());
                }
                Op::ConcatRows(parts) => {
                    let cols = g.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let rows = self.value(p).rows();
                        let slice = g.data()[offset * cols..(offset + rows) * cols].to_vec();
                        accumulate(&mut grads, p, Tensor::matrix(rows, cols, slice)?);
                        offset += rows;
                    }
                }
                Op::GatherRows(a, rows) => {
                    let src = self.value(*a);
                    let cols = src.cols();
                    let mut ga = Tensor::zeros(src.rows(), cols);
                    for (i, &r) in rows.iter().enumerate() {
                        let dst = &mut ga.data_mut()[r * cols..(r + 1) * cols];
                        for (d, &v) in dst.iter_mut().zip(g.row(i)) {
                            *d += v;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Flatten(a) => {
                    let shape = self.value(*a).shape().to_vec();
                    accumulate(&mut grads, *a, g.reshaped(shape)?);
                }
                Op::Sum(a) => {
                    let t = self.value(*a);
                    let gv = g.data()[0];
                    accumulate(&mut grads, *a, t.map(|_| gv));
                }
                Op::Ln(a) => {
                    let x = self.value(*a);
                    accumulate(
                        &mut grads,
                        *a,
                        g.zip_map(x, |gv, xv| if xv > LOG_CLAMP { gv / xv } else { 0.0 }),
                    );
                }
            }
        }

        let mut out = Gradients::zeros_like(self.params);
        for (pid, var) in self.param_vars.iter().enumerate() {
            if let Some(v) = var {
                if let Some(Some(g)) = grads.get(v.0) {
                    out.0[pid] = g.clone();
                }
            }
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn row_softmax(t: &Tensor) -> Tensor {
    let n = t.cols();
    let mut out = t.clone();
    for row in out.data_mut().chunks_mut(n) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}
