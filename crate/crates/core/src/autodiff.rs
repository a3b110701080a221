//! Define-by-run reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every operation in construction order, which is already
//! a topological order, so [`Tape::backward`] is a single reverse sweep.
//! Adjoints accumulate additively when a node feeds several consumers.
//! Every op checks its output for NaN/Inf and reports the offending op.

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::stable::{log1mexp_grad, log1mexp_unclamped, log_softmax_row, logsumexp, LOG1MEXP_CLAMP, LOG1MEXP_TOLERANCE};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    AddScalar(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sum(Var),
    Mean(Var),
    Gather(Var, Vec<usize>),
    SliceCols(Var, usize, usize),
    ConcatCols(Var, Var),
    LogSoftmax(Var),
    LogSumExpRows(Var),
    Log1mExp(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::AddScalar(..) => "add_scalar",
            Op::Scale(..) => "scale",
            Op::Relu(_) => "relu",
            Op::Tanh(_) => "tanh",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Gather(..) => "gather",
            Op::SliceCols(..) => "slice_cols",
            Op::ConcatCols(..) => "concat_cols",
            Op::LogSoftmax(_) => "log_softmax",
            Op::LogSumExpRows(_) => "logsumexp_rows",
            Op::Log1mExp(_) => "log1mexp",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Named parameter leaves bound onto a tape.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: Vec<(String, Var)>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .iter()
            .find(|(n, _)| n == name)
            .map(|&(_, v)| v)
            .ok_or_else(|| Error::InvalidArgument(format!("no parameter named {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(n, v)| (n.as_str(), *v))
    }
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn rank2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    if t.rank() != 2 {
        return Err(Error::shape(op, format!("expected a matrix, got shape {:?}", t.shape())));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        self.nodes.push(Node { op, value });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        self.push(Op::Leaf, value)
    }

    /// Adds every tensor of `params` as a leaf, in the set's order.
    pub fn bind(&mut self, params: &ParamSet) -> Result<BoundParams> {
        let mut vars = Vec::with_capacity(params.len());
        for (name, t) in params.iter() {
            vars.push((name.to_string(), self.leaf(t.clone())?));
        }
        Ok(BoundParams { vars })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(Op::MatMul(a, b), out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        self.push(Op::Add(a, b), out)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        self.push(Op::Sub(a, b), out)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        self.push(Op::Mul(a, b), out)
    }

    /// Adds a length-`n` bias vector to every row of an `m × n` matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let (_, n) = rank2("add_row", xv)?;
        let bv = self.value(bias);
        if bv.len() != n {
            return Err(Error::shape(
                "add_row",
                format!("bias {:?} for matrix {:?}", bv.shape(), xv.shape()),
            ));
        }
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        self.push(Op::AddRow(x, bias), out)
    }

    /// Adds a one-element tensor to every entry of `x`.
    pub fn add_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        let sv = self.value(s);
        if sv.len() != 1 {
            return Err(Error::shape("add_scalar", format!("scalar operand has shape {:?}", sv.shape())));
        }
        let c = sv.item();
        let out = self.value(x).map(|v| v + c);
        self.push(Op::AddScalar(x, s), out)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v * factor);
        self.push(Op::Scale(x, factor), out)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.scale(x, -1.0)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(Op::Relu(x), out)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(f64::tanh);
        self.push(Op::Tanh(x), out)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(Op::Sum(x), out)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.is_empty() {
            return Err(Error::Empty("mean input"));
        }
        let out = Tensor::scalar(xv.sum() / xv.len() as f64);
        self.push(Op::Mean(x), out)
    }

    /// Picks `x[i, idx[i]]` from each row, giving an `n × 1` column.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let (n, c) = rank2("gather", xv)?;
        if idx.len() != n {
            return Err(Error::shape("gather", format!("{} indices for {n} rows", idx.len())));
        }
        let mut data = Vec::with_capacity(n);
        for (i, &j) in idx.iter().enumerate() {
            if j >= c {
                return Err(Error::LabelOutOfRange { label: j, classes: c });
            }
            data.push(xv.at(i, j));
        }
        let out = Tensor::new(vec![n, 1], data)?;
        self.push(Op::Gather(x, idx.to_vec()), out)
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        let (n, c) = rank2("slice_cols", xv)?;
        if start >= end || end > c {
            return Err(Error::shape("slice_cols", format!("range {start}..{end} of {c} columns")));
        }
        let w = end - start;
        let mut data = Vec::with_capacity(n * w);
        for i in 0..n {
            data.extend_from_slice(&xv.row(i)[start..end]);
        }
        let out = Tensor::new(vec![n, w], data)?;
        self.push(Op::SliceCols(x, start, end), out)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (n, ca) = rank2("concat_cols", av)?;
        let (nb, cb) = rank2("concat_cols", bv)?;
        if n != nb {
            return Err(Error::shape("concat_cols", format!("{n} rows vs {nb} rows")));
        }
        let mut data = Vec::with_capacity(n * (ca + cb));
        for i in 0..n {
            data.extend_from_slice(av.row(i));
            data.extend_from_slice(bv.row(i));
        }
        let out = Tensor::new(vec![n, ca + cb], data)?;
        self.push(Op::ConcatCols(a, b), out)
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (_, c) = rank2("log_softmax", xv)?;
        if !xv.is_finite() {
            return Err(Error::NonFinite { op: "log_softmax" });
        }
        let mut out = Tensor::zeros(xv.shape());
        for (row, o) in xv.data().chunks(c).zip(out.data_mut().chunks_mut(c)) {
            log_softmax_row(row, o)?;
        }
        self.push(Op::LogSoftmax(x), out)
    }

    /// Row-wise log-sum-exp, giving an `n × 1` column.
    pub fn logsumexp_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (n, c) = rank2("logsumexp_rows", xv)?;
        let data = xv
            .data()
            .chunks(c)
            .map(logsumexp)
            .collect::<Result<Vec<_>>>()?;
        let out = Tensor::new(vec![n, 1], data)?;
        self.push(Op::LogSumExpRows(x), out)
    }

    /// Elementwise `log(1 - exp(a))`; arguments above the clamp are held at
    /// the clamp and receive zero gradient.
    pub fn log1mexp(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if let Some(&bad) = xv.data().iter().find(|&&a| a.is_nan() || a > LOG1MEXP_TOLERANCE) {
            return Err(Error::InvalidArgument(format!("log1mexp requires a < 0, got {bad}")));
        }
        let out = xv.map(|a| log1mexp_unclamped(a.min(LOG1MEXP_CLAMP)));
        self.push(Op::Log1mExp(x), out)
    }

    /// Reverse sweep from a one-element root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_val = self.value(root);
        if root_val.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("root must be scalar, got shape {:?}", root_val.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::full(root_val.shape(), 1.0));

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = g.matmul_t(self.value(*b))?;
                    let db = self.value(*a).t_matmul(&g)?;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.map(|v| -v));
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Mul(a, b) => {
                    let da = g.zip_map(self.value(*b), |d, y| d * y)?;
                    let db = g.zip_map(self.value(*a), |d, x| d * x)?;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::AddRow(x, bias) => {
                    let n = g.cols();
                    let mut db = vec![0.0; n];
                    for row in g.data().chunks(n) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    let bshape = self.value(*bias).shape().to_vec();
                    accumulate(&mut grads, *bias, Tensor::new(bshape, db)?);
                    accumulate(&mut grads, *x, g.clone());
                }
                Op::AddScalar(x, s) => {
                    let sshape = self.value(*s).shape().to_vec();
                    accumulate(&mut grads, *s, Tensor::new(sshape, vec![g.sum()])?);
                    accumulate(&mut grads, *x, g.clone());
                }
                Op::Scale(x, f) => {
                    accumulate(&mut grads, *x, g.map(|v| v * f));
                }
                Op::Relu(x) => {
                    let dx = g.zip_map(self.value(*x), |d, v| if v > 0.0 { d } else { 0.0 })?;
                    accumulate(&mut grads, *x, dx);
                }
                Op::Tanh(x) => {
                    let dx = g.zip_map(&node.value, |d, y| d * (1.0 - y * y))?;
                    accumulate(&mut grads, *x, dx);
                }
                Op::Sum(x) => {
                    let d = g.item();
                    accumulate(&mut grads, *x, Tensor::full(self.value(*x).shape(), d));
                }
                Op::Mean(x) => {
                    let xv = self.value(*x);
                    let d = g.item() / xv.len() as f64;
                    accumulate(&mut grads, *x, Tensor::full(xv.shape(), d));
                }
                Op::Gather(x, idx) => {
                    let xv = self.value(*x);
                    let c = xv.cols();
                    let mut dx = Tensor::zeros(xv.shape());
                    for (i, (&j, &d)) in idx.iter().zip(g.data()).enumerate() {
                        dx.data_mut()[i * c + j] += d;
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::SliceCols(x, start, end) => {
                    let xv = self.value(*x);
                    let c = xv.cols();
                    let w = end - start;
                    let mut dx = Tensor::zeros(xv.shape());
                    for (i, row) in g.data().chunks(w).enumerate() {
                        dx.data_mut()[i * c + start..i * c + end].copy_from_slice(row);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.value(*a).cols();
                    let cb = self.value(*b).cols();
                    let n = g.rows();
                    let mut da = Vec::with_capacity(n * ca);
                    let mut db = Vec::with_capacity(n * cb);
                    for row in g.data().chunks(ca + cb) {
                        da.extend_from_slice(&row[..ca]);
                        db.extend_from_slice(&row[ca..]);
                    }
                    accumulate(&mut grads, *a, Tensor::new(vec![n, ca], da)?);
                    accumulate(&mut grads, *b, Tensor::new(vec![n, cb], db)?);
                }
                Op::LogSoftmax(x) => {
                    // dx = dy - softmax · Σ dy
                    let c = g.cols();
                    let mut dx = Tensor::zeros(g.shape());
                    for ((gr, yr), dr) in g
                        .data()
                        .chunks(c)
                        .zip(node.value.data().chunks(c))
                        .zip(dx.data_mut().chunks_mut(c))
                    {
                        let total: f64 = gr.iter().sum();
                        for ((d, &gy), &y) in dr.iter_mut().zip(gr).zip(yr) {
                            *d = gy - y.exp() * total;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::LogSumExpRows(x) => {
                    let xv = self.value(*x);
                    let c = xv.cols();
                    let mut dx = Tensor::zeros(xv.shape());
                    for (i, (xr, dr)) in xv.data().chunks(c).zip(dx.data_mut().chunks_mut(c)).enumerate() {
                        let lse = node.value.data()[i];
                        let d = g.data()[i];
                        for (o, &v) in dr.iter_mut().zip(xr) {
                            *o = d * (v - lse).exp();
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Log1mExp(x) => {
                    let dx = g.zip_map(self.value(*x), |d, a| {
                        if a > LOG1MEXP_CLAMP {
                            0.0
                        } else {
                            d * log1mexp_grad(a)
                        }
                    })?;
                    accumulate(&mut grads, *x, dx);
                }
            }
            grads[i] = Some(g);
        }
        for g in grads.iter().flatten() {
            if !g.is_finite() {
                return Err(Error::NonFinite { op: "backward" });
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Adjoints of every node reachable from the root.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of its shape when `v` did not influence the root.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()))
    }

    /// Gradients for every bound parameter, keyed like the original set.
    pub fn collect(&self, tape: &Tape, bound: &BoundParams) -> Result<ParamSet> {
        let mut out = ParamSet::new();
        for (name, v) in bound.iter() {
            out.insert(name, self.wrt(tape, v))?;
        }
        Ok(out)
    }
}
