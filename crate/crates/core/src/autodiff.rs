//! Reverse-mode automatic differentiation over a dynamic tape.
//!
//! Every forward call appends a node holding its value and enough context to
//! replay the adjoint. `Tape::backward` walks the nodes once in reverse order.
//! Values are double precision; parameters are borrowed from the
//! [`ParamStore`] mirror and their gradients land in a [`GradStore`].

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::params::{GradStore, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Floor applied inside `cross_entropy` before taking the log.
pub const LOG_FLOOR: f64 = 1e-12;
/// Layer-norm epsilon.
pub const LN_EPS: f64 = 1e-5;

/// GELU value and derivative at `x`.
fn gelu_parts(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
    let inner = C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let dinner = C * (1.0 + 3.0 * 0.044715 * x * x);
    (0.5 * x * (1.0 + t), 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner)
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Embed { table: ParamId, idx: Vec<usize> },
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddN(Vec<Var>),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Gelu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Concat(Vec<Var>),
    ConcatRows(Vec<Var>),
    Rows { x: Var, idx: Vec<usize> },
    Select { x: Var, idx: Vec<usize> },
    SliceCols { x: Var, start: usize },
    Reshape(Var),
    Sum(Var),
    CrossEntropy { p: Var, label: usize },
}

struct Node<'p> {
    value: Cow<'p, Tensor<f64>>,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by one backward pass, for leaves created with
/// `requires_grad`.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

pub struct Tape<'p> {
    store: Option<&'p ParamStore>,
    nodes: Vec<Node<'p>>,
    param_vars: Vec<Option<Var>>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

fn two_d(t: &Tensor<f64>) -> (usize, usize) {
    (t.rows(), t.cols())
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self {
            store: None,
            nodes: Vec::new(),
            param_vars: Vec::new(),
        }
    }

    pub fn with_params(store: &'p ParamStore) -> Self {
        Self {
            store: Some(store),
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn store(&self) -> &'p ParamStore {
        self.store.expect("tape was created without a parameter store")
    }

    fn push(&mut self, value: Tensor<f64>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn leaf(&mut self, value: Tensor<f64>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<f64>) -> Var {
        self.leaf(value, false)
    }

    /// Node for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        let value = self.store().get_f64(id);
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Param(id),
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.index()] = Some(v);
        v
    }

    /// Row lookup into a `[vocab × d]` parameter table; output `[idx.len() × d]`.
    pub fn embedding(&mut self, table: ParamId, idx: &[usize]) -> Result<Var> {
        let t = self.store().get_f64(table);
        let (rows, cols) = two_d(t);
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            if i >= rows {
                return Err(Error::Index { index: i, len: rows });
            }
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::new(vec![idx.len(), cols], data)?;
        Ok(self.push(
            out,
            Op::Embed {
                table,
                idx: idx.to_vec(),
            },
            true,
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(Error::Shape {
                op: "matmul",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let (ad, bd) = (av.data(), bv.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = ad[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &bd[p * n..(p + 1) * n];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += aip * b;
                }
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (m, n) = two_d(av);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = av.data()[i * n + j];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::Transpose(a), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op,
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Sum of several same-shaped nodes.
    pub fn add_n(&mut self, vars: &[Var]) -> Result<Var> {
        let first = *vars.first().ok_or(Error::Internal("add_n of nothing".into()))?;
        let mut acc = self.value(first).data().to_vec();
        for &v in &vars[1..] {
            self.same_shape("add_n", first, v)?;
            for (a, x) in acc.iter_mut().zip(self.value(v).data()) {
                *a += x;
            }
        }
        let out = Tensor::new(self.shape(first).to_vec(), acc)?;
        let rg = vars.iter().any(|&v| self.rg(v));
        Ok(self.push(out, Op::AddN(vars.to_vec()), rg))
    }

    /// Adds a length-n bias to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.shape().len() != 1 || bv.len() != xv.cols() {
            return Err(Error::Shape {
                op: "add_row",
                left: xv.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let n = xv.cols();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bv.data()[i % n])
            .collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(out, Op::AddRow(x, bias), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|x| x * factor).collect();
        let out = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, factor), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        let out = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| gelu_parts(x).0).collect();
        let out = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(out, Op::Gelu(a), rg)
    }

    /// Softmax over the last axis. `-inf` entries map to exactly zero.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let n = av.cols();
        let mut out = vec![0.0; av.len()];
        for (src, dst) in av.data().chunks(n).zip(out.chunks_mut(n)) {
            softmax_into(src, dst)?;
        }
        let out = Tensor::new(av.shape().to_vec(), out)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Softmax(a), rg))
    }

    /// Layer normalisation over the last axis with population variance.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let n = xv.cols();
        if gv.len() != n || bv.len() != n {
            return Err(Error::Shape {
                op: "layer_norm",
                left: xv.shape().to_vec(),
                right: gv.shape().to_vec(),
            });
        }
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = Vec::with_capacity(xv.rows());
        let mut out = vec![0.0; xv.len()];
        for (r, row) in xv.data().chunks(n).enumerate() {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(inv);
            for j in 0..n {
                let h = (row[j] - mean) * inv;
                xhat[r * n + j] = h;
                out[r * n + j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        let out = Tensor::new(xv.shape().to_vec(), out)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Concatenation along the last axis; leading extents must agree.
    pub fn concat(&mut self, vars: &[Var]) -> Result<Var> {
        let first = *vars.first().ok_or(Error::Internal("concat of nothing".into()))?;
        let rows = self.value(first).rows();
        let one_d = self.shape(first).len() == 1;
        for &v in vars {
            if self.value(v).rows() != rows || (self.shape(v).len() == 1) != one_d {
                return Err(Error::Shape {
                    op: "concat",
                    left: self.shape(first).to_vec(),
                    right: self.shape(v).to_vec(),
                });
            }
        }
        let total: usize = vars.iter().map(|&v| self.value(v).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &v in vars {
                data.extend_from_slice(self.value(v).row(r));
            }
        }
        let shape = if one_d { vec![total] } else { vec![rows, total] };
        let rg = vars.iter().any(|&v| self.rg(v));
        Ok(self.push(Tensor::new(shape, data)?, Op::Concat(vars.to_vec()), rg))
    }

    /// Stacks rows of several inputs (vectors count as single rows).
    pub fn concat_rows(&mut self, vars: &[Var]) -> Result<Var> {
        let first = *vars.first().ok_or(Error::Internal("concat_rows of nothing".into()))?;
        let cols = self.value(first).cols();
        let mut data = Vec::new();
        for &v in vars {
            if self.value(v).cols() != cols {
                return Err(Error::Shape {
                    op: "concat_rows",
                    left: self.shape(first).to_vec(),
                    right: self.shape(v).to_vec(),
                });
            }
            data.extend_from_slice(self.value(v).data());
        }
        let rows = data.len() / cols;
        let rg = vars.iter().any(|&v| self.rg(v));
        Ok(self.push(
            Tensor::new(vec![rows, cols], data)?,
            Op::ConcatRows(vars.to_vec()),
            rg,
        ))
    }

    /// Gathers rows of `x`; output `[idx.len() × cols]`.
    pub fn rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = two_d(xv);
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            if i >= rows {
                return Err(Error::Index { index: i, len: rows });
            }
            data.extend_from_slice(xv.row(i));
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![idx.len(), cols], data)?,
            Op::Rows {
                x,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    /// Single row as a vector.
    pub fn row(&mut self, x: Var, i: usize) -> Result<Var> {
        let r = self.rows(x, &[i])?;
        let n = self.value(r).len();
        self.reshape(r, &[n])
    }

    /// Gathers flat elements; output is a vector.
    pub fn select(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let mut data = Vec::with_capacity(idx.len());
        for &i in idx {
            data.push(*xv.data().get(i).ok_or(Error::Index {
                index: i,
                len: xv.len(),
            })?);
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![idx.len()], data)?,
            Op::Select {
                x,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    /// Columns `start..start+len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = two_d(xv);
        if start + len > cols || len == 0 {
            return Err(Error::Index {
                index: start + len,
                len: cols,
            });
        }
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&xv.row(r)[start..start + len]);
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![rows, len], data)?,
            Op::SliceCols { x, start },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshaped(shape.to_vec())?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// `-ln(max(p[label], LOG_FLOOR))` for a probability vector `p`.
    pub fn cross_entropy(&mut self, p: Var, label: usize) -> Result<Var> {
        let pv = self.value(p);
        let pl = *pv.data().get(label).ok_or(Error::Index {
            index: label,
            len: pv.len(),
        })?;
        let loss = if pl.is_nan() { f64::NAN } else { -pl.max(LOG_FLOOR).ln() };
        let rg = self.rg(p);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { p, label }, rg))
    }

    /// Replays adjoints from `loss` (a single-element node) in reverse order.
    /// Parameter gradients are added into `params` when provided.
    pub fn backward(&self, loss: Var, mut params: Option<&mut GradStore>) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape {
                op: "backward",
                left: self.shape(loss).to_vec(),
                right: vec![1],
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let g = match &node.op {
                Op::Leaf => continue,
                _ => match grads[i].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            self.backprop_node(node, &g, &mut grads, params.as_deref_mut());
        }
        Ok(Gradients { grads })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        let len = node.value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn backprop_node(
        &self,
        node: &Node<'p>,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        params: Option<&mut GradStore>,
    ) {
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => {
                if let Some(ps) = params {
                    for (d, s) in ps.slot(*id, g.len()).iter_mut().zip(g) {
                        *d += s;
                    }
                }
            }
            Op::Embed { table, idx } => {
                if let Some(ps) = params {
                    let t = self.store().get_f64(*table);
                    let cols = t.cols();
                    let dst = ps.slot(*table, t.len());
                    for (k, &row) in idx.iter().enumerate() {
                        for j in 0..cols {
                            dst[row * cols + j] += g[k * cols + j];
                        }
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if let Some(da) = self.slot(grads, *a) {
                    let bd = bv.data();
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            da[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                if let Some(db) = self.slot(grads, *b) {
                    let ad = av.data();
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = ad[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for (d, &x) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *d += aip * x;
                            }
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                let (m, n) = two_d(self.value(*a));
                if let Some(da) = self.slot(grads, *a) {
                    for i in 0..m {
                        for j in 0..n {
                            da[i * n + j] += g[j * m + i];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(d) = self.slot(grads, v) {
                        d.iter_mut().zip(g).for_each(|(d, x)| *d += x);
                    }
                }
            }
            Op::AddN(vars) => {
                for &v in vars {
                    if let Some(d) = self.slot(grads, v) {
                        d.iter_mut().zip(g).for_each(|(d, x)| *d += x);
                    }
                }
            }
            Op::AddRow(x, bias) => {
                if let Some(d) = self.slot(grads, *x) {
                    d.iter_mut().zip(g).for_each(|(d, v)| *d += v);
                }
                if let Some(d) = self.slot(grads, *bias) {
                    let n = d.len();
                    for (i, v) in g.iter().enumerate() {
                        d[i % n] += v;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(d) = self.slot(grads, *a) {
                    for ((d, x), y) in d.iter_mut().zip(g).zip(bv) {
                        *d += x * y;
                    }
                }
                if let Some(d) = self.slot(grads, *b) {
                    for ((d, x), y) in d.iter_mut().zip(g).zip(av) {
                        *d += x * y;
                    }
                }
            }
            Op::Scale(a, f) => {
                if let Some(d) = self.slot(grads, *a) {
                    d.iter_mut().zip(g).for_each(|(d, x)| *d += x * f);
                }
            }
            Op::Relu(a) => {
                let av = self.value(*a).data();
                if let Some(d) = self.slot(grads, *a) {
                    for ((d, x), &v) in d.iter_mut().zip(g).zip(av) {
                        if v > 0.0 {
                            *d += x;
                        }
                    }
                }
            }
            Op::Gelu(a) => {
                let av = self.value(*a).data();
                if let Some(d) = self.slot(grads, *a) {
                    for ((d, x), &v) in d.iter_mut().zip(g).zip(av) {
                        *d += x * gelu_parts(v).1;
                    }
                }
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let n = node.value.cols();
                if let Some(d) = self.slot(grads, *a) {
                    for ((dr, gr), yr) in d.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            dr[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gv = self.value(*gamma).data();
                let n = gv.len();
                if let Some(dg) = self.slot(grads, *gamma) {
                    for (gr, hr) in g.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            dg[j] += gr[j] * hr[j];
                        }
                    }
                }
                if let Some(db) = self.slot(grads, *beta) {
                    for gr in g.chunks(n) {
                        for j in 0..n {
                            db[j] += gr[j];
                        }
                    }
                }
                if let Some(dx) = self.slot(grads, *x) {
                    for (r, (gr, hr)) in g.chunks(n).zip(xhat.chunks(n)).enumerate() {
                        let mut mean_d = 0.0;
                        let mut mean_dh = 0.0;
                        for j in 0..n {
                            let dh = gr[j] * gv[j];
                            mean_d += dh;
                            mean_dh += dh * hr[j];
                        }
                        mean_d /= n as f64;
                        mean_dh /= n as f64;
                        for j in 0..n {
                            let dh = gr[j] * gv[j];
                            dx[r * n + j] += inv_std[r] * (dh - mean_d - hr[j] * mean_dh);
                        }
                    }
                }
            }
            Op::Concat(vars) => {
                let total = node.value.cols();
                let rows = node.value.rows();
                let mut offset = 0;
                for &v in vars {
                    let c = self.value(v).cols();
                    if let Some(d) = self.slot(grads, v) {
                        for r in 0..rows {
                            for j in 0..c {
                                d[r * c + j] += g[r * total + offset + j];
                            }
                        }
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(vars) => {
                let mut offset = 0;
                for &v in vars {
                    let len = self.value(v).len();
                    if let Some(d) = self.slot(grads, v) {
                        d.iter_mut()
                            .zip(&g[offset..offset + len])
                            .for_each(|(d, x)| *d += x);
                    }
                    offset += len;
                }
            }
            Op::Rows { x, idx } => {
                let cols = self.value(*x).cols();
                if let Some(d) = self.slot(grads, *x) {
                    for (k, &row) in idx.iter().enumerate() {
                        for j in 0..cols {
                            d[row * cols + j] += g[k * cols + j];
                        }
                    }
                }
            }
            Op::Select { x, idx } => {
                if let Some(d) = self.slot(grads, *x) {
                    for (k, &i) in idx.iter().enumerate() {
                        d[i] += g[k];
                    }
                }
            }
            Op::SliceCols { x, start } => {
                let cols = self.value(*x).cols();
                let len = node.value.cols();
                if let Some(d) = self.slot(grads, *x) {
                    for (r, gr) in g.chunks(len).enumerate() {
                        for j in 0..len {
                            d[r * cols + start + j] += gr[j];
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(d) = self.slot(grads, *x) {
                    d.iter_mut().zip(g).for_each(|(d, v)| *d += v);
                }
            }
            Op::Sum(x) => {
                if let Some(d) = self.slot(grads, *x) {
                    d.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::CrossEntropy { p, label } => {
                let pl = self.value(*p).data()[*label];
                if let Some(d) = self.slot(grads, *p) {
                    if pl > LOG_FLOOR {
                        d[*label] -= g[0] / pl;
                    }
                }
            }
        }
    }
}

/// Max-subtracted softmax of one row. `-inf` entries produce exact zeros;
/// a NaN anywhere makes the whole row NaN.
pub fn softmax_into(src: &[f64], dst: &mut [f64]) -> Result<()> {
    if src.iter().any(|x| x.is_nan()) {
        dst.fill(f64::NAN);
        return Ok(());
    }
    let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::DegenerateMask);
    }
    let mut total = 0.0;
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = if s == f64::NEG_INFINITY { 0.0 } else { (s - max).exp() };
        total += *d;
    }
    dst.iter_mut().for_each(|d| *d /= total);
    Ok(())
}

pub fn softmax_vec(src: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; src.len()];
    softmax_into(src, &mut out)?;
    Ok(out)
}
