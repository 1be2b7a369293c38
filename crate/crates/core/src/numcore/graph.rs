//! Reverse-mode tape.
//!
//! A [`Graph`] is built fresh for every forward pass. Nodes are appended in
//! evaluation order, so a single reverse sweep over the node list is a valid
//! topological order for backpropagation.

use crate::error::{Error, Result};

use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How the right operand of a binary op is broadcast against the left.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bcast {
    Same,
    Scalar,
    Row,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId, Bcast),
    Sub(NodeId, NodeId, Bcast),
    Mul(NodeId, NodeId, Bcast),
    Div(NodeId, NodeId, Bcast),
    Scale(NodeId, f64),
    AddConst(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Sigmoid(NodeId),
    LogSigmoid(NodeId),
    Softplus(NodeId),
    Tanh(NodeId),
    Gelu(NodeId),
    Square(NodeId),
    Clamp(NodeId, f64, f64),
    Sum(NodeId),
    Mean(NodeId),
    SumCols(NodeId),
    MatMul(NodeId, NodeId),
    MatMulT(NodeId, NodeId),
    Transpose(NodeId),
    SoftmaxRows(NodeId),
    NormRows(NodeId, Vec<f64>),
    SliceCols(NodeId, usize),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    GatherRows(NodeId, Vec<usize>),
    Reshape(NodeId),
    Huber(NodeId, NodeId, f64),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Vec<f64>>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log σ(x) = −log(1 + e^{−x}), evaluated without overflow.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

fn axpy(dst: &mut [f64], alpha: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn ng(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// Gradient of the last `backward` output with respect to `id`.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.grads
            .get(id.0)
            .filter(|g| !g.is_empty())
            .map(Vec::as_slice)
    }

    fn bcast(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<Bcast> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            Ok(Bcast::Same)
        } else if tb.len() == 1 {
            Ok(Bcast::Scalar)
        } else if tb.shape().len() <= 2
            && tb.rows() == 1
            && tb.cols() == ta.cols()
            && ta.shape().len() >= 2
        {
            Ok(Bcast::Row)
        } else {
            Err(Error::Shape {
                op,
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            })
        }
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        mk: impl Fn(NodeId, NodeId, Bcast) -> Op,
    ) -> Result<NodeId> {
        let mode = self.bcast(name, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let bd = tb.data();
        let data: Vec<f64> = match mode {
            Bcast::Same => ta.data().iter().zip(bd).map(|(x, y)| f(*x, *y)).collect(),
            Bcast::Scalar => ta.data().iter().map(|x| f(*x, bd[0])).collect(),
            Bcast::Row => {
                let c = ta.cols();
                ta.data()
                    .iter()
                    .enumerate()
                    .map(|(i, x)| f(*x, bd[i % c]))
                    .collect()
            }
        };
        let value = Tensor::from_parts(ta.shape().to_vec(), data);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, mk(a, b, mode), ng))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("div", a, b, |x, y| x / y, Op::Div)
    }

    fn unary(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let ta = self.value(a);
        let value = Tensor::from_parts(ta.shape().to_vec(), ta.data().iter().map(|x| f(*x)).collect());
        let ng = self.ng(a);
        self.push(value, op, ng)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.scale(a, -1.0)
    }

    pub fn add_const(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(a, |x| x + c, Op::AddConst(a))
    }

    /// `c - a`
    pub fn rsub_const(&mut self, c: f64, a: NodeId) -> NodeId {
        let n = self.neg(a);
        self.add_const(n, c)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn log_sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, log_sigmoid, Op::LogSigmoid(a))
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, gelu, Op::Gelu(a))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    /// Clamp into `[lo, hi]`; gradient is zero where the bound is active.
    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data().iter().sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len().max(1) as f64;
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Mean(a), ng)
    }

    /// Row sums: `[m, n] -> [m]`.
    pub fn sum_cols(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let data: Vec<f64> = (0..t.rows()).map(|i| t.row(i).iter().sum()).collect();
        let ng = self.ng(a);
        self.push(Tensor::vector(data), Op::SumCols(a), ng)
    }

    fn dims2(&self, op: &'static str, id: NodeId) -> Result<(usize, usize)> {
        let s = self.shape(id);
        match s.len() {
            1 => Ok((1, s[0])),
            2 => Ok((s[0], s[1])),
            _ => Err(Error::Shape {
                op,
                lhs: s.to_vec(),
                rhs: vec![],
            }),
        }
    }

    /// `[m, k] · [k, n] -> [m, n]`
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.dims2("matmul", a)?;
        let (k2, n) = self.dims2("matmul", b)?;
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = ad[i * k + p];
                if av != 0.0 {
                    axpy(orow, av, &bd[p * n..(p + 1) * n]);
                }
            }
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), ng))
    }

    /// `[m, k] · [n, k]ᵀ -> [m, n]`
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.dims2("matmul_t", a)?;
        let (n, k2) = self.dims2("matmul_t", b)?;
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul_t",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let ar = &ad[i * k..(i + 1) * k];
            for j in 0..n {
                out[i * n + j] = dot(ar, &bd[j * k..(j + 1) * k]);
            }
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMulT(a, b), ng))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, n) = self.dims2("transpose", a)?;
        let ad = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = ad[i * n + j];
            }
        }
        let ng = self.ng(a);
        Ok(self.push(Tensor::from_parts(vec![n, m], out), Op::Transpose(a), ng))
    }

    /// Softmax along the last axis with max subtraction.
    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let c = t.cols();
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(c.max(1)) {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        let value = Tensor::from_parts(t.shape().to_vec(), out);
        let ng = self.ng(a);
        self.push(value, Op::SoftmaxRows(a), ng)
    }

    /// Per-row standardization `(x - mean) / sqrt(var + eps)`, no affine part.
    pub fn norm_rows(&mut self, a: NodeId, eps: f64) -> NodeId {
        let t = self.value(a);
        let c = t.cols();
        let mut out = t.data().to_vec();
        let mut inv = Vec::with_capacity(t.rows());
        for row in out.chunks_mut(c.max(1)) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * is;
            }
            inv.push(is);
        }
        let value = Tensor::from_parts(t.shape().to_vec(), out);
        let ng = self.ng(a);
        self.push(value, Op::NormRows(a, inv), ng)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (m, n) = self.dims2("slice_cols", a)?;
        if start + len > n {
            return Err(Error::Shape {
                op: "slice_cols",
                lhs: self.shape(a).to_vec(),
                rhs: vec![start, len],
            });
        }
        let ad = self.value(a).data();
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&ad[i * n + start..i * n + start + len]);
        }
        let shape = if self.shape(a).len() == 1 {
            vec![len]
        } else {
            vec![m, len]
        };
        let ng = self.ng(a);
        Ok(self.push(Tensor::from_parts(shape, out), Op::SliceCols(a, start), ng))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = *parts.first().ok_or_else(|| Error::invalid("concat of nothing"))?;
        let (m, _) = self.dims2("concat_cols", first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = self.dims2("concat_cols", p)?;
            if pm != m {
                return Err(Error::Shape {
                    op: "concat_cols",
                    lhs: self.shape(first).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            widths.push(pn);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(
            Tensor::from_parts(vec![m, total], out),
            Op::ConcatCols(parts.to_vec()),
            ng,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = *parts.first().ok_or_else(|| Error::invalid("concat of nothing"))?;
        let (_, n) = self.dims2("concat_rows", first)?;
        let mut out = Vec::new();
        let mut m = 0;
        for &p in parts {
            let (pm, pn) = self.dims2("concat_rows", p)?;
            if pn != n {
                return Err(Error::Shape {
                    op: "concat_rows",
                    lhs: self.shape(first).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            out.extend_from_slice(self.value(p).data());
            m += pm;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(
            Tensor::from_parts(vec![m, n], out),
            Op::ConcatRows(parts.to_vec()),
            ng,
        ))
    }

    /// Row lookup; backward scatters into the table.
    pub fn gather_rows(&mut self, table: NodeId, idx: &[usize]) -> Result<NodeId> {
        let (m, n) = self.dims2("gather_rows", table)?;
        let td = self.value(table).data();
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            if i >= m {
                return Err(Error::UnknownEvent(i));
            }
            out.extend_from_slice(&td[i * n..(i + 1) * n]);
        }
        let ng = self.ng(table);
        Ok(self.push(
            Tensor::from_parts(vec![idx.len(), n], out),
            Op::GatherRows(table, idx.to_vec()),
            ng,
        ))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let t = self.value(a).clone();
        let value = t.reshape(shape.to_vec())?;
        let ng = self.ng(a);
        Ok(self.push(value, Op::Reshape(a), ng))
    }

    /// Elementwise Huber penalty of `pred - target`.
    pub fn huber(&mut self, pred: NodeId, target: NodeId, delta: f64) -> Result<NodeId> {
        let (tp, tt) = (self.value(pred), self.value(target));
        if tp.shape() != tt.shape() {
            return Err(Error::Shape {
                op: "huber",
                lhs: tp.shape().to_vec(),
                rhs: tt.shape().to_vec(),
            });
        }
        let data = tp
            .data()
            .iter()
            .zip(tt.data())
            .map(|(p, t)| huber_value((p - t).abs(), delta))
            .collect();
        let value = Tensor::from_parts(tp.shape().to_vec(), data);
        let ng = self.ng(pred) || self.ng(target);
        Ok(self.push(value, Op::Huber(pred, target, delta), ng))
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&mut self, out: NodeId) -> Result<()> {
        if self.value(out).len() != 1 {
            return Err(Error::Shape {
                op: "backward",
                lhs: self.shape(out).to_vec(),
                rhs: vec![1],
            });
        }
        let n = out.0 + 1;
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); self.nodes.len()];
        grads[out.0] = vec![1.0];
        for i in (0..n).rev() {
            if grads[i].is_empty() || !self.nodes[i].needs_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let g = std::mem::take(&mut grads[i]);
            self.backprop_node(i, &g, &mut grads);
            grads[i] = g;
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Vec<f64>]) {
        let nodes = &self.nodes;
        let val = |id: NodeId| &nodes[id.0].value;
        let out = &nodes[i].value;
        let mut acc = |id: NodeId, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[id.0].needs_grad {
                return;
            }
            let buf = &mut grads[id.0];
            if buf.is_empty() {
                *buf = vec![0.0; nodes[id.0].value.len()];
            }
            f(buf);
        };
        let reduce_b = |mode: Bcast, contrib: &dyn Fn(usize) -> f64, buf: &mut [f64], cols: usize| match mode {
            Bcast::Same => {
                for (k, b) in buf.iter_mut().enumerate() {
                    *b += contrib(k);
                }
            }
            Bcast::Scalar => {
                buf[0] += (0..g.len()).map(contrib).sum::<f64>();
            }
            Bcast::Row => {
                for k in 0..g.len() {
                    buf[k % cols] += contrib(k);
                }
            }
        };
        let bidx = |mode: Bcast, k: usize, cols: usize| match mode {
            Bcast::Same => k,
            Bcast::Scalar => 0,
            Bcast::Row => k % cols,
        };

        match &nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b, mode) => {
                let cols = out.cols();
                acc(*a, &mut |buf| axpy(buf, 1.0, g));
                acc(*b, &mut |buf| reduce_b(*mode, &|k| g[k], buf, cols));
            }
            Op::Sub(a, b, mode) => {
                let cols = out.cols();
                acc(*a, &mut |buf| axpy(buf, 1.0, g));
                acc(*b, &mut |buf| reduce_b(*mode, &|k| -g[k], buf, cols));
            }
            Op::Mul(a, b, mode) => {
                let cols = out.cols();
                let (ad, bd) = (val(*a).data(), val(*b).data());
                acc(*a, &mut |buf| {
                    for k in 0..g.len() {
                        buf[k] += g[k] * bd[bidx(*mode, k, cols)];
                    }
                });
                acc(*b, &mut |buf| reduce_b(*mode, &|k| g[k] * ad[k], buf, cols));
            }
            Op::Div(a, b, mode) => {
                let cols = out.cols();
                let bd = val(*b).data();
                let od = out.data();
                acc(*a, &mut |buf| {
                    for k in 0..g.len() {
                        buf[k] += g[k] / bd[bidx(*mode, k, cols)];
                    }
                });
                acc(*b, &mut |buf| {
                    reduce_b(*mode, &|k| -g[k] * od[k] / bd[bidx(*mode, k, cols)], buf, cols)
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |buf| axpy(buf, *c, g)),
            Op::AddConst(a) | Op::Reshape(a) => acc(*a, &mut |buf| axpy(buf, 1.0, g)),
            Op::Exp(a) => {
                let od = out.data();
                acc(*a, &mut |buf| {
                    for k in 0..g.len() {
                        buf[k] += g[k] * od[k];
                    }
                });
            }
            Op::Log(a) => {
                let ad = val(*a).data();
                acc(*a, &mut |buf| {
                    for k in 0..g.len() {
                        buf[k] += g[k] / ad[k];
                    }
                });
            }
            Op::Sigmoid(a) => {
                let od = out.data();
                acc(*a, &mut |buf| {
                    for k in 0..g.len() {
                        buf[k] += g[k] * od[k] * (1.0 - od[k]);
                    }
                });
            }
            Op::LogSigmoid(a) => {
                let ad = val(*a).data();
                acc(*a, &mut |buf| {
                    for k in 0..g.len() {
                        buf[k] += g[k] * sigmoid(-ad[k]);
                    }
                });
            }
            Op::Softplus(a) => {
                let ad = val(*a).data();
                acc(*a, &mut |buf| {
                    for k in 0..g.len() {
                        buf[k] += g[k] * sigmoid(ad[k]);
                    }
                });
            }
            Op::Tanh(a) => {
                let od = out.data();
                acc(*a, &mut |buf| {
                    for k in 0..g.len() {
                        buf[k] += g[k] * (1.0 - od[k] * od[k]);
                    }
                });
            }
            Op::Gelu(a) => {
                let ad = val(*a).data();
                acc(*a, &mut |buf| {
                    for k in 0..g.len() {
                        buf[k] += g[k] * gelu_grad(ad[k]);
                    }
                });
            }
            Op::Square(a) => {
                let ad = val(*a).data();
                acc(*a, &mut |buf| {
                    for k in 0..g.len() {
                        buf[k] += 2.0 * g[k] * ad[k];
                    }
                });
            }
            Op::Clamp(a, lo, hi) => {
                let ad = val(*a).data();
                acc(*a, &mut |buf| {
                    for k in 0..g.len() {
                        if ad[k] >= *lo && ad[k] <= *hi {
                            buf[k] += g[k];
                        }
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |buf| buf.iter_mut().for_each(|b| *b += g[0])),
            Op::Mean(a) => {
                let n = val(*a).len().max(1) as f64;
                acc(*a, &mut |buf| buf.iter_mut().for_each(|b| *b += g[0] / n));
            }
            Op::SumCols(a) => {
                let c = val(*a).cols();
                acc(*a, &mut |buf| {
                    for (k, b) in buf.iter_mut().enumerate() {
                        *b += g[k / c];
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k) = (ta.len() / ta.cols(), ta.cols());
                let n = tb.cols();
                let (ad, bd) = (ta.data(), tb.data());
                acc(*a, &mut |buf| {
                    for r in 0..m {
                        let gr = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            buf[r * k + p] += dot(gr, &bd[p * n..(p + 1) * n]);
                        }
                    }
                });
                acc(*b, &mut |buf| {
                    for r in 0..m {
                        let gr = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let av = ad[r * k + p];
                            if av != 0.0 {
                                axpy(&mut buf[p * n..(p + 1) * n], av, gr);
                            }
                        }
                    }
                });
            }
            Op::MatMulT(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let k = ta.cols();
                let m = ta.len() / k;
                let n = tb.len() / k;
                let (ad, bd) = (ta.data(), tb.data());
                acc(*a, &mut |buf| {
                    for r in 0..m {
                        let dst = &mut buf[r * k..(r + 1) * k];
                        for j in 0..n {
                            let gv = g[r * n + j];
                            if gv != 0.0 {
                                axpy(dst, gv, &bd[j * k..(j + 1) * k]);
                            }
                        }
                    }
                });
                acc(*b, &mut |buf| {
                    for r in 0..m {
                        let ar = &ad[r * k..(r + 1) * k];
                        for j in 0..n {
                            let gv = g[r * n + j];
                            if gv != 0.0 {
                                axpy(&mut buf[j * k..(j + 1) * k], gv, ar);
                            }
                        }
                    }
                });
            }
            Op::Transpose(a) => {
                let (m, n) = (out.cols(), out.rows());
                acc(*a, &mut |buf| {
                    for r in 0..m {
                        for c in 0..n {
                            buf[r * n + c] += g[c * m + r];
                        }
                    }
                });
            }
            Op::SoftmaxRows(a) => {
                let c = out.cols();
                let od = out.data();
                acc(*a, &mut |buf| {
                    for r in 0..od.len() / c {
                        let y = &od[r * c..(r + 1) * c];
                        let gr = &g[r * c..(r + 1) * c];
                        let s = dot(y, gr);
                        for j in 0..c {
                            buf[r * c + j] += y[j] * (gr[j] - s);
                        }
                    }
                });
            }
            Op::NormRows(a, inv) => {
                let c = out.cols();
                let od = out.data();
                acc(*a, &mut |buf| {
                    for (r, is) in inv.iter().enumerate() {
                        let y = &od[r * c..(r + 1) * c];
                        let gr = &g[r * c..(r + 1) * c];
                        let mg = gr.iter().sum::<f64>() / c as f64;
                        let mgy = dot(gr, y) / c as f64;
                        for j in 0..c {
                            buf[r * c + j] += is * (gr[j] - mg - y[j] * mgy);
                        }
                    }
                });
            }
            Op::SliceCols(a, start) => {
                let n = val(*a).cols();
                let len = out.cols();
                acc(*a, &mut |buf| {
                    for r in 0..out.len() / len.max(1) {
                        axpy(
                            &mut buf[r * n + start..r * n + start + len],
                            1.0,
                            &g[r * len..(r + 1) * len],
                        );
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = out.cols();
                let m = out.rows();
                let mut off = 0;
                for p in parts {
                    let w = val(*p).cols();
                    acc(*p, &mut |buf| {
                        for r in 0..m {
                            axpy(
                                &mut buf[r * w..(r + 1) * w],
                                1.0,
                                &g[r * total + off..r * total + off + w],
                            );
                        }
                    });
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let len = val(*p).len();
                    acc(*p, &mut |buf| axpy(buf, 1.0, &g[off..off + len]));
                    off += len;
                }
            }
            Op::GatherRows(table, idx) => {
                let n = out.cols();
                acc(*table, &mut |buf| {
                    for (r, &i) in idx.iter().enumerate() {
                        axpy(&mut buf[i * n..(i + 1) * n], 1.0, &g[r * n..(r + 1) * n]);
                    }
                });
            }
            Op::Huber(p, t, delta) => {
                let (pd, td) = (val(*p).data(), val(*t).data());
                let d = |k: usize| {
                    let x = pd[k] - td[k];
                    if x.abs() < *delta {
                        x
                    } else {
                        delta * x.signum()
                    }
                };
                acc(*p, &mut |buf| {
                    for k in 0..g.len() {
                        buf[k] += g[k] * d(k);
                    }
                });
                acc(*t, &mut |buf| {
                    for k in 0..g.len() {
                        buf[k] -= g[k] * d(k);
                    }
                });
            }
        }
    }
}

/// Huber penalty for an absolute residual.
pub fn huber_value(abs_residual: f64, delta: f64) -> f64 {
    if abs_residual < delta {
        0.5 * abs_residual * abs_residual
    } else {
        delta * (abs_residual - 0.5 * delta)
    }
}
