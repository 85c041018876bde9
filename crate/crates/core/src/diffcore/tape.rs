//! Reverse-mode tape over [`Tensor`] values.
//!
//! A tape is built fresh for every forward pass. Parameters enter the tape by
//! name from a [`ParameterStore`]; [`Tape::backward`] accumulates their
//! gradients back into the store.

use std::collections::BTreeMap;

use super::params::ParameterStore;
use super::tensor::{matmul_nt_into, matmul_tn_into, row_norm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Operation kinds, used for fault injection when validating the gradient checker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    MatMul,
    Add,
    AddRow,
    Scale,
    MulScalar,
    Exp,
    Log,
    Tanh,
    Relu,
    SoftmaxRows,
    LogSoftmaxRows,
    L2NormalizeRows,
    LayerNormRows,
    MeanRows,
    MeanRowGroups,
    SumAll,
    ConcatRows,
    ConcatCols,
    Transpose,
    Slice,
    GatherRows,
    Diag,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    MulScalar(Var, Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Relu(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    L2NormalizeRows(Var),
    LayerNormRows(Var, f64),
    MeanRows(Var),
    MeanRowGroups(Var, usize),
    SumAll(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Transpose(Var),
    Slice { input: Var, row: usize, col: usize },
    GatherRows(Var, Vec<usize>),
    Diag(Var),
}

impl Op {
    fn kind(&self) -> Option<OpKind> {
        Some(match self {
            Op::Leaf => return None,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::AddRow(..) => OpKind::AddRow,
            Op::Scale(..) => OpKind::Scale,
            Op::MulScalar(..) => OpKind::MulScalar,
            Op::Exp(..) => OpKind::Exp,
            Op::Log(..) => OpKind::Log,
            Op::Tanh(..) => OpKind::Tanh,
            Op::Relu(..) => OpKind::Relu,
            Op::SoftmaxRows(..) => OpKind::SoftmaxRows,
            Op::LogSoftmaxRows(..) => OpKind::LogSoftmaxRows,
            Op::L2NormalizeRows(..) => OpKind::L2NormalizeRows,
            Op::LayerNormRows(..) => OpKind::LayerNormRows,
            Op::MeanRows(..) => OpKind::MeanRows,
            Op::MeanRowGroups(..) => OpKind::MeanRowGroups,
            Op::SumAll(..) => OpKind::SumAll,
            Op::ConcatRows(..) => OpKind::ConcatRows,
            Op::ConcatCols(..) => OpKind::ConcatCols,
            Op::Transpose(..) => OpKind::Transpose,
            Op::Slice { .. } => OpKind::Slice,
            Op::GatherRows(..) => OpKind::GatherRows,
            Op::Diag(..) => OpKind::Diag,
        })
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
    fault: Option<(OpKind, f64)>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Scale every gradient produced by `kind`'s backward rule by `factor`.
    ///
    /// Only meant for negative controls of the gradient checker.
    pub fn inject_gradient_fault(&mut self, kind: OpKind, factor: f64) {
        self.fault = Some((kind, factor));
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::Numerical(format!(
                "non-finite value produced by {:?}",
                op.kind()
            )));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    /// Load a named parameter; repeated loads return the same node.
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = store.value(name)?.clone();
        let v = self.constant(value);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dims2()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if !x.same_shape(y) {
            return Err(shape_err("add", x, y));
        }
        let mut value = x.clone();
        value.add_assign(y);
        self.push(value, Op::Add(a, b))
    }

    /// Add a `1 x n` row to every row of an `m x n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, r) = (self.value(a), self.value(row));
        if r.rows() != 1 || r.cols() != x.cols() {
            return Err(shape_err("add_row", x, r));
        }
        let mut value = x.clone();
        for i in 0..value.rows() {
            for (v, b) in value.row_mut(i).iter_mut().zip(r.data()) {
                *v += b;
            }
        }
        self.push(value, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let value = self.value(a).map(|v| v * s);
        self.push(value, Op::Scale(a, s))
    }

    /// Multiply by a `1 x 1` node.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let sv = self.value(s);
        if sv.len() != 1 {
            return Err(shape_err("mul_scalar", self.value(a), sv));
        }
        let k = sv.item();
        let value = self.value(a).map(|v| v * k);
        self.push(value, Op::MulScalar(a, s))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::exp);
        self.push(value, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.data().iter().any(|&v| v <= 0.0) {
            return Err(Error::Numerical("log of non-positive value".into()));
        }
        let value = x.map(f64::ln);
        self.push(value, Op::Log(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|v| v.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).softmax_rows();
        self.push(value, Op::SoftmaxRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let mut value = self.value(a).clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        self.push(value, Op::LogSoftmaxRows(a))
    }

    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).l2_normalize_rows();
        self.push(value, Op::L2NormalizeRows(a))
    }

    /// Per-row standardization (no affine part).
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Result<Var> {
        let mut value = self.value(a).clone();
        let n = value.cols() as f64;
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * inv);
        }
        self.push(value, Op::LayerNormRows(a, eps))
    }

    /// Mean over the row axis: `m x n -> 1 x n`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let (m, n) = x.dims2();
        let mut out = vec![0.0; n];
        for r in 0..m {
            for (o, v) in out.iter_mut().zip(x.row(r)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|v| *v /= m as f64);
        self.push(Tensor::row_vector(out), Op::MeanRows(a))
    }

    /// Mean over consecutive groups of `group` rows: `(g*k) x n -> k x n`.
    pub fn mean_row_groups(&mut self, a: Var, group: usize) -> Result<Var> {
        let x = self.value(a);
        let (m, n) = x.dims2();
        if group == 0 || m % group != 0 {
            return Err(Error::Shape {
                op: "mean_row_groups",
                lhs: x.shape().to_vec(),
                rhs: vec![group],
            });
        }
        let k = m / group;
        let mut out = vec![0.0; k * n];
        for r in 0..m {
            let dst = &mut out[(r / group) * n..(r / group + 1) * n];
            for (o, v) in dst.iter_mut().zip(x.row(r)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|v| *v /= group as f64);
        self.push(Tensor::from_rows(k, n, out)?, Op::MeanRowGroups(a, group))
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len() as f64;
        let s = self.sum_all(a)?;
        self.scale(s, 1.0 / n)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::contract("concat_rows of nothing"))?;
        let n = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != n {
                return Err(shape_err("concat_rows", self.value(*first), t));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        self.push(Tensor::from_rows(rows, n, data)?, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::contract("concat_cols of nothing"))?;
        let m = self.value(*first).rows();
        for &p in parts {
            if self.value(p).rows() != m {
                return Err(shape_err("concat_cols", self.value(*first), self.value(p)));
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(m * total);
        for r in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        self.push(Tensor::from_rows(m, total, data)?, Op::ConcatCols(parts.to_vec()))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a))
    }

    /// Sub-block `[row..row+rows, col..col+cols]`.
    pub fn slice(&mut self, a: Var, row: usize, rows: usize, col: usize, cols: usize) -> Result<Var> {
        let x = self.value(a);
        let (m, n) = x.dims2();
        if rows == 0 || cols == 0 || row + rows > m || col + cols > n {
            return Err(Error::Shape {
                op: "slice",
                lhs: x.shape().to_vec(),
                rhs: vec![row, rows, col, cols],
            });
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in row..row + rows {
            data.extend_from_slice(&x.row(r)[col..col + cols]);
        }
        self.push(Tensor::from_rows(rows, cols, data)?, Op::Slice { input: a, row, col })
    }

    /// Select rows by index (repeats allowed); also serves as embedding lookup.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let x = self.value(a);
        let (m, n) = x.dims2();
        if indices.is_empty() || indices.iter().any(|&i| i >= m) {
            return Err(Error::Shape {
                op: "gather_rows",
                lhs: x.shape().to_vec(),
                rhs: indices.to_vec(),
            });
        }
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend_from_slice(x.row(i));
        }
        self.push(
            Tensor::from_rows(indices.len(), n, data)?,
            Op::GatherRows(a, indices.to_vec()),
        )
    }

    /// Diagonal of a square matrix as a `1 x n` row.
    pub fn diag(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let (m, n) = x.dims2();
        if m != n {
            return Err(shape_err("diag", x, x));
        }
        let data = (0..n).map(|i| x.get(i, i)).collect();
        self.push(Tensor::row_vector(data), Op::Diag(a))
    }

    /// `x W + b` for a row-batch `x`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_row(y, b),
            None => Ok(y),
        }
    }

    /// Gradients of a scalar node with respect to every node on the tape.
    pub fn gradients(&self, loss: Var) -> Result<Vec<Option<Tensor>>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::new(lv.shape().to_vec(), vec![1.0])?);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            let factor = match (self.fault, node.op.kind()) {
                (Some((k, f)), Some(kind)) if k == kind => f,
                _ => 1.0,
            };
            self.backprop_node(node, &g, factor, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(grads)
    }

    /// Accumulate gradients of `loss` into every non-frozen parameter used on this tape.
    pub fn backward(&self, loss: Var, store: &mut ParameterStore) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (name, var) in &self.params {
            if let Some(Some(g)) = grads.get(var.0) {
                store.accumulate_grad(name, g)?;
            }
        }
        Ok(())
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, factor: f64, grads: &mut [Option<Tensor>]) -> Result<()> {
        let mut acc = |v: Var, delta: Tensor| {
            let delta = if factor != 1.0 {
                delta.map(|x| x * factor)
            } else {
                delta
            };
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = av.dims2();
                let n = bv.cols();
                let mut ga = vec![0.0; m * k];
                matmul_nt_into(g.data(), bv.data(), &mut ga, m, n, k);
                let mut gb = vec![0.0; k * n];
                matmul_tn_into(av.data(), g.data(), &mut gb, m, k, n);
                acc(*a, Tensor::new(av.shape().to_vec(), ga)?);
                acc(*b, Tensor::new(bv.shape().to_vec(), gb)?);
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::AddRow(a, row) => {
                let n = g.cols();
                let mut gr = vec![0.0; n];
                for r in 0..g.rows() {
                    for (o, v) in gr.iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                acc(*a, g.clone());
                acc(*row, Tensor::row_vector(gr));
            }
            Op::Scale(a, s) => acc(*a, g.map(|v| v * s)),
            Op::MulScalar(a, s) => {
                let k = self.value(*s).item();
                let x = self.value(*a);
                let gs: f64 = x.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
                acc(*a, g.map(|v| v * k));
                acc(*s, Tensor::new(self.value(*s).shape().to_vec(), vec![gs])?);
            }
            Op::Exp(a) => acc(*a, zip_map(g, y, |g, y| g * y)),
            Op::Log(a) => acc(*a, zip_map(g, self.value(*a), |g, x| g / x)),
            Op::Tanh(a) => acc(*a, zip_map(g, y, |g, y| g * (1.0 - y * y))),
            Op::Relu(a) => acc(*a, zip_map(g, self.value(*a), |g, x| if x > 0.0 { g } else { 0.0 })),
            Op::SoftmaxRows(a) => {
                let mut out = g.clone();
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let inner: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((o, &yv), &gv) in out.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o = yv * (gv - inner);
                    }
                }
                acc(*a, out);
            }
            Op::LogSoftmaxRows(a) => {
                let mut out = g.clone();
                for r in 0..y.rows() {
                    let gsum: f64 = g.row(r).iter().sum();
                    for (o, &ly) in out.row_mut(r).iter_mut().zip(y.row(r)) {
                        *o -= ly.exp() * gsum;
                    }
                }
                acc(*a, out);
            }
            Op::L2NormalizeRows(a) => {
                let x = self.value(*a);
                let mut out = g.clone();
                for r in 0..y.rows() {
                    let norm = row_norm(x.row(r));
                    let (yr, gr) = (y.row(r), g.row(r));
                    let inner: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((o, &yv), &gv) in out.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o = (gv - yv * inner) / norm;
                    }
                }
                acc(*a, out);
            }
            Op::LayerNormRows(a, eps) => {
                let x = self.value(*a);
                let n = x.cols() as f64;
                let mut out = g.clone();
                for r in 0..y.rows() {
                    let xr = x.row(r);
                    let mean = xr.iter().sum::<f64>() / n;
                    let var = xr.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                    let inv = 1.0 / (var + eps).sqrt();
                    let (yr, gr) = (y.row(r), g.row(r));
                    let gmean = gr.iter().sum::<f64>() / n;
                    let gy = yr.iter().zip(gr).map(|(a, b)| a * b).sum::<f64>() / n;
                    for ((o, &yv), &gv) in out.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o = inv * (gv - gmean - yv * gy);
                    }
                }
                acc(*a, out);
            }
            Op::MeanRows(a) => {
                let x = self.value(*a);
                let m = x.rows();
                let mut out = Tensor::zeros(m, x.cols());
                for r in 0..m {
                    for (o, v) in out.row_mut(r).iter_mut().zip(g.data()) {
                        *o = v / m as f64;
                    }
                }
                acc(*a, out);
            }
            Op::MeanRowGroups(a, group) => {
                let x = self.value(*a);
                let mut out = Tensor::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    for (o, v) in out.row_mut(r).iter_mut().zip(g.row(r / group)) {
                        *o = v / *group as f64;
                    }
                }
                acc(*a, out);
            }
            Op::SumAll(a) => {
                let x = self.value(*a);
                acc(*a, Tensor::new(x.shape().to_vec(), vec![g.item(); x.len()])?);
            }
            Op::ConcatRows(parts) => {
                let n = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let rows = self.value(p).rows();
                    let data = g.data()[offset * n..(offset + rows) * n].to_vec();
                    acc(p, Tensor::from_rows(rows, n, data)?);
                    offset += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let m = g.rows();
                let mut offset = 0;
                for &p in parts {
                    let cols = self.value(p).cols();
                    let mut data = Vec::with_capacity(m * cols);
                    for r in 0..m {
                        data.extend_from_slice(&g.row(r)[offset..offset + cols]);
                    }
                    acc(p, Tensor::from_rows(m, cols, data)?);
                    offset += cols;
                }
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::Slice { input, row, col } => {
                let x = self.value(*input);
                let mut out = Tensor::zeros(x.rows(), x.cols());
                let cols = g.cols();
                for r in 0..g.rows() {
                    out.row_mut(row + r)[*col..col + cols].copy_from_slice(g.row(r));
                }
                acc(*input, out);
            }
            Op::GatherRows(a, indices) => {
                let x = self.value(*a);
                let mut out = Tensor::zeros(x.rows(), x.cols());
                for (k, &i) in indices.iter().enumerate() {
                    for (o, v) in out.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                acc(*a, out);
            }
            Op::Diag(a) => {
                let n = g.cols();
                let mut out = Tensor::zeros(n, n);
                for i in 0..n {
                    out.set(i, i, g.get(0, i));
                }
                acc(*a, out);
            }
        }
        Ok(())
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("zip_map operands share a shape")
}
