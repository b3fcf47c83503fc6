//! Define-by-run reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation applied to its [`Var`] handles.
//! Nodes are appended in evaluation order, so parents always precede
//! children and the backward sweep is a single reverse pass.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::{Ref, RefCell};

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::graph::{CsrMatrix, KHopMask};
use crate::math;
use crate::tensor::{dot, BoolMatrix, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Tanh => math::tanh(x),
        }
    }
}

/// Attention inputs for one head, `d_head x N` each.
#[derive(Clone, Debug)]
pub struct AttentionInputs {
    pub q: Var,
    pub k: Var,
    pub v: Var,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Hadamard(Var, Var),
    MulConst(Var, Arc<Tensor>),
    Transpose(Var),
    Relu(Var),
    Tanh(Var),
    Sum(Var),
    RowSoftmax(Var),
    Spmm(Var, Arc<CsrMatrix>),
    ConcatRows(Vec<Var>),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    SparseAttention {
        q: Var,
        k: Var,
        v: Var,
        mask: Arc<KHopMask>,
        scale: f64,
        keep: Option<Arc<Vec<f64>>>,
        weights: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        labels: Arc<Vec<usize>>,
        nodes: Arc<Vec<usize>>,
    },
    SpdLoss {
        emb: Var,
        pairs: Arc<Vec<(usize, usize, f64)>>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recording of one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape(),
        rhs: b.shape(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    /// Differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that receives no gradient.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Borrow of a recorded value. Drop it before recording further ops.
    pub fn value(&self, v: Var) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes.borrow()[v.0].value.shape()
    }

    fn requires(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].requires_grad)
    }

    fn unary(&self, x: Var, f: impl FnOnce(&Tensor) -> Result<Tensor>, op: Op) -> Result<Var> {
        let out = f(&self.value(x))?;
        let rg = self.requires(&[x]);
        Ok(self.push(out, op, rg))
    }

    fn binary(
        &self,
        a: Var,
        b: Var,
        f: impl FnOnce(&Tensor, &Tensor) -> Result<Tensor>,
        op: Op,
    ) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            f(&nodes[a.0].value, &nodes[b.0].value)?
        };
        let rg = self.requires(&[a, b]);
        Ok(self.push(out, op, rg))
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x.matmul(y), Op::MatMul(a, b))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x.add(y), Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x.sub(y), Op::Sub(a, b))
    }

    /// `x + b 1^T` for a column vector `b` with as many rows as `x`.
    pub fn add_bias(&self, x: Var, b: Var) -> Result<Var> {
        self.binary(
            x,
            b,
            |x, b| {
                if b.cols() != 1 || b.rows() != x.rows() {
                    return Err(shape_err("add_bias", x, b));
                }
                let mut out = x.clone();
                for r in 0..x.rows() {
                    let br = b.get(r, 0);
                    out.row_mut(r).iter_mut().for_each(|v| *v += br);
                }
                Ok(out)
            },
            Op::AddBias(x, b),
        )
    }

    pub fn scale(&self, x: Var, s: f64) -> Result<Var> {
        self.unary(x, |t| Ok(t.scale(s)), Op::Scale(x, s))
    }

    pub fn hadamard(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x.hadamard(y), Op::Hadamard(a, b))
    }

    /// Elementwise product with a fixed tensor (dropout masks).
    pub fn mul_const(&self, x: Var, c: Arc<Tensor>) -> Result<Var> {
        let cc = c.clone();
        self.unary(x, move |t| t.hadamard(&cc), Op::MulConst(x, c))
    }

    pub fn transpose(&self, x: Var) -> Result<Var> {
        self.unary(x, |t| Ok(t.transpose()), Op::Transpose(x))
    }

    pub fn relu(&self, x: Var) -> Result<Var> {
        self.unary(x, |t| Ok(t.map(|v| Activation::Relu.apply(v))), Op::Relu(x))
    }

    pub fn tanh(&self, x: Var) -> Result<Var> {
        self.unary(x, |t| Ok(t.map(math::tanh)), Op::Tanh(x))
    }

    pub fn activation(&self, x: Var, kind: Activation) -> Result<Var> {
        match kind {
            Activation::Relu => self.relu(x),
            Activation::Tanh => self.tanh(x),
        }
    }

    /// Sum of all entries, as a `1 x 1` value.
    pub fn sum(&self, x: Var) -> Result<Var> {
        self.unary(x, |t| Ok(Tensor::scalar(t.sum())), Op::Sum(x))
    }

    pub fn mean(&self, x: Var) -> Result<Var> {
        let n = self.value(x).len().max(1) as f64;
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n)
    }

    /// Mean squared difference between two same-shape values.
    pub fn mse(&self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.hadamard(d, d)?;
        self.mean(sq)
    }

    /// Row softmax, restricted to `mask` when given. Masked entries are
    /// exactly zero.
    pub fn masked_row_softmax(&self, scores: Var, mask: Option<&BoolMatrix>) -> Result<Var> {
        let out = {
            let s = self.value(scores);
            if let Some(m) = mask {
                if m.shape() != s.shape() {
                    return Err(Error::Shape {
                        op: "masked_row_softmax",
                        lhs: s.shape(),
                        rhs: m.shape(),
                    });
                }
            }
            let mut out = Tensor::zeros(s.rows(), s.cols());
            for r in 0..s.rows() {
                let allowed = |c: usize| mask.is_none_or(|m| m.get(r, c));
                let row = s.row(r);
                let mut max = f64::NEG_INFINITY;
                for (c, &v) in row.iter().enumerate() {
                    if allowed(c) && v > max {
                        max = v;
                    }
                }
                if max == f64::NEG_INFINITY {
                    return Err(Error::EmptyNeighborhood { row: r });
                }
                let orow = out.row_mut(r);
                let mut total = 0.0;
                for (c, &v) in row.iter().enumerate() {
                    if allowed(c) {
                        let e = math::exp(v - max);
                        orow[c] = e;
                        total += e;
                    }
                }
                orow.iter_mut().for_each(|v| *v /= total);
            }
            out
        };
        let rg = self.requires(&[scores]);
        Ok(self.push(out, Op::RowSoftmax(scores), rg))
    }

    /// `x S` for a sparse `N x N` matrix `S` and dense `D x N` signal `x`.
    pub fn spmm(&self, x: Var, s: Arc<CsrMatrix>) -> Result<Var> {
        let out = s.right_multiply(&self.value(x))?;
        let rg = self.requires(&[x]);
        Ok(self.push(out, Op::Spmm(x, s), rg))
    }

    /// Stacks values with equal column counts on top of each other.
    pub fn concat_rows(&self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(contract("concat_rows needs at least one input"));
        }
        let out = {
            let nodes = self.nodes.borrow();
            let refs: Vec<&Tensor> = parts.iter().map(|p| &nodes[p.0].value).collect();
            Tensor::vstack(&refs)?
        };
        let rg = self.requires(parts);
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Normalizes every column to zero mean and unit variance over rows.
    pub fn layer_norm_cols(&self, x: Var, eps: f64) -> Result<Var> {
        let (out, inv_std) = {
            let t = self.value(x);
            let (d, n) = t.shape();
            let mut out = Tensor::zeros(d, n);
            let mut inv_std = vec![0.0; n];
            for c in 0..n {
                let mut mu = 0.0;
                for r in 0..d {
                    mu += t.get(r, c);
                }
                mu /= d as f64;
                let mut var = 0.0;
                for r in 0..d {
                    let z = t.get(r, c) - mu;
                    var += z * z;
                }
                var /= d as f64;
                let is = 1.0 / math::sqrt(var + eps);
                inv_std[c] = is;
                for r in 0..d {
                    out.set(r, c, (t.get(r, c) - mu) * is);
                }
            }
            (out, inv_std)
        };
        let rg = self.requires(&[x]);
        Ok(self.push(out, Op::LayerNorm { x, inv_std }, rg))
    }

    /// Masked softmax attention for one head.
    ///
    /// With `q`, `k`, `v` of shape `d x N`, output column `i` is
    /// `sum_j a_ij v_j` over `j` in `mask.row(i)`, where `a_i` is the
    /// softmax of `scale * <q_i, k_j>`. `keep`, when given, multiplies each
    /// attention weight (in mask order) after normalization.
    pub fn sparse_attention(
        &self,
        inputs: &AttentionInputs,
        mask: Arc<KHopMask>,
        scale: f64,
        keep: Option<Arc<Vec<f64>>>,
    ) -> Result<Var> {
        let AttentionInputs { q, k, v } = *inputs;
        let (out, weights) = {
            let nodes = self.nodes.borrow();
            let (qt, kt, vt) = (&nodes[q.0].value, &nodes[k.0].value, &nodes[v.0].value);
            let n = qt.cols();
            if kt.shape() != qt.shape() {
                return Err(shape_err("sparse_attention(q,k)", qt, kt));
            }
            if vt.cols() != n {
                return Err(shape_err("sparse_attention(q,v)", qt, vt));
            }
            if mask.n() != n {
                return Err(contract(format!(
                    "attention mask covers {} nodes, inputs have {n}",
                    mask.n()
                )));
            }
            if let Some(kp) = &keep {
                if kp.len() != mask.nnz() {
                    return Err(contract("attention dropout mask length differs from mask nnz"));
                }
            }
            let (qn, kn, vn) = (qt.transpose(), kt.transpose(), vt.transpose());
            let dv = vt.rows();
            let mut out_nm = Tensor::zeros(n, dv);
            let mut weights = vec![0.0; mask.nnz()];
            for i in 0..n {
                let row = mask.row(i);
                if row.is_empty() {
                    return Err(Error::EmptyNeighborhood { row: i });
                }
                let base = mask.row_start(i);
                let w = &mut weights[base..base + row.len()];
                let qi = qn.row(i);
                let mut max = f64::NEG_INFINITY;
                for (slot, &j) in w.iter_mut().zip(row) {
                    *slot = scale * dot(qi, kn.row(j));
                    if *slot > max {
                        max = *slot;
                    }
                }
                let mut total = 0.0;
                for slot in w.iter_mut() {
                    *slot = math::exp(*slot - max);
                    total += *slot;
                }
                let orow = out_nm.row_mut(i);
                for (e, (slot, &j)) in w.iter_mut().zip(row).enumerate() {
                    *slot /= total;
                    let a = match &keep {
                        Some(kp) => *slot * kp[base + e],
                        None => *slot,
                    };
                    if a != 0.0 {
                        for (o, x) in orow.iter_mut().zip(vn.row(j)) {
                            *o += a * x;
                        }
                    }
                }
            }
            (out_nm.transpose(), weights)
        };
        let rg = self.requires(&[q, k, v]);
        Ok(self.push(
            out,
            Op::SparseAttention {
                q,
                k,
                v,
                mask,
                scale,
                keep,
                weights,
            },
            rg,
        ))
    }

    /// Attention weights saved by a [`Tape::sparse_attention`] node, in
    /// mask order, before dropout.
    pub fn attention_weights(&self, v: Var) -> Option<(Arc<KHopMask>, Vec<f64>)> {
        match &self.nodes.borrow()[v.0].op {
            Op::SparseAttention { mask, weights, .. } => Some((mask.clone(), weights.clone())),
            _ => None,
        }
    }

    /// Mean negative log-softmax of the true class over `nodes`.
    ///
    /// `logits` is `C x N`, one column per node.
    pub fn cross_entropy(
        &self,
        logits: Var,
        labels: Arc<Vec<usize>>,
        nodes: Arc<Vec<usize>>,
    ) -> Result<Var> {
        if nodes.is_empty() {
            return Err(contract("cross_entropy over an empty node set"));
        }
        let loss = {
            let z = self.value(logits);
            let (c, n) = z.shape();
            if labels.len() != n {
                return Err(contract(format!("{} labels for {n} nodes", labels.len())));
            }
            let mut total = 0.0;
            for &i in nodes.iter() {
                if i >= n {
                    return Err(contract(format!("node {i} out of range for {n} nodes")));
                }
                let y = labels[i];
                if y >= c {
                    return Err(contract(format!("label {y} at node {i} exceeds {c} classes")));
                }
                let (lse, _) = log_sum_exp_col(&z, i);
                total += lse - z.get(y, i);
            }
            total / nodes.len() as f64
        };
        let rg = self.requires(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels,
                nodes,
            },
            rg,
        ))
    }

    /// Mean over pairs of `(|e_i - e_j|_1 - spd)^2` with embeddings as
    /// columns of `emb`.
    pub fn spd_loss(&self, emb: Var, pairs: Arc<Vec<(usize, usize, f64)>>) -> Result<Var> {
        if pairs.is_empty() {
            return Err(contract("spd loss over an empty pair set"));
        }
        let loss = {
            let e = self.value(emb);
            let n = e.cols();
            let mut total = 0.0;
            for &(i, j, s) in pairs.iter() {
                if i >= n || j >= n {
                    return Err(contract(format!("pair ({i}, {j}) out of range for {n} nodes")));
                }
                let r = l1_col_distance(&e, i, j) - s;
                total += r * r;
            }
            total / pairs.len() as f64
        };
        let rg = self.requires(&[emb]);
        Ok(self.push(Tensor::scalar(loss), Op::SpdLoss { emb, pairs }, rg))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let Some(last) = nodes.get(loss.0) else {
            return Err(contract("loss is not on this tape"));
        };
        if last.value.shape() != (1, 1) {
            return Err(contract(format!(
                "backward needs a 1x1 loss, got {:?}",
                last.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let node = &nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let mut acc = |v: Var, t: Tensor| -> Result<()> {
                if !nodes[v.0].requires_grad {
                    return Ok(());
                }
                match &mut grads[v.0] {
                    Some(existing) => existing.add_assign(&t),
                    slot @ None => {
                        *slot = Some(t);
                        Ok(())
                    }
                }
            };
            let val = |v: Var| &nodes[v.0].value;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    acc(*a, g.matmul_nt(val(*b))?)?;
                    acc(*b, val(*a).matmul_tn(&g)?)?;
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone())?;
                    acc(*b, g)?;
                }
                Op::Sub(a, b) => {
                    acc(*b, g.scale(-1.0))?;
                    acc(*a, g)?;
                }
                Op::AddBias(x, b) => {
                    let gb = Tensor::from_fn(g.rows(), 1, |r, _| g.row(r).iter().sum());
                    acc(*b, gb)?;
                    acc(*x, g)?;
                }
                Op::Scale(x, s) => acc(*x, g.scale(*s))?,
                Op::Hadamard(a, b) => {
                    acc(*a, g.hadamard(val(*b))?)?;
                    acc(*b, g.hadamard(val(*a))?)?;
                }
                Op::MulConst(x, c) => acc(*x, g.hadamard(c)?)?,
                Op::Transpose(x) => acc(*x, g.transpose())?,
                Op::Relu(x) => {
                    let xv = val(*x);
                    let mut gx = g;
                    for (gi, &xi) in gx.data_mut().iter_mut().zip(xv.data()) {
                        if xi <= 0.0 {
                            *gi = 0.0;
                        }
                    }
                    acc(*x, gx)?;
                }
                Op::Tanh(x) => {
                    let y = &node.value;
                    let mut gx = g;
                    for (gi, &yi) in gx.data_mut().iter_mut().zip(y.data()) {
                        *gi *= 1.0 - yi * yi;
                    }
                    acc(*x, gx)?;
                }
                Op::Sum(x) => {
                    let (r, c) = val(*x).shape();
                    acc(*x, Tensor::filled(r, c, g.get(0, 0)))?;
                }
                Op::RowSoftmax(x) => {
                    let y = &node.value;
                    let mut gx = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let inner = dot(yr, gr);
                        for (o, (yi, gi)) in gx.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                            *o = yi * (gi - inner);
                        }
                    }
                    acc(*x, gx)?;
                }
                Op::Spmm(x, s) => acc(*x, s.right_multiply_transpose(&g)?)?,
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let rows = val(*p).rows();
                        let piece = Tensor::from_fn(rows, g.cols(), |r, c| g.get(start + r, c));
                        start += rows;
                        acc(*p, piece)?;
                    }
                }
                Op::LayerNorm { x, inv_std } => {
                    let y = &node.value;
                    let (d, n) = y.shape();
                    let mut gx = Tensor::zeros(d, n);
                    for c in 0..n {
                        let mut mg = 0.0;
                        let mut mgy = 0.0;
                        for r in 0..d {
                            mg += g.get(r, c);
                            mgy += g.get(r, c) * y.get(r, c);
                        }
                        mg /= d as f64;
                        mgy /= d as f64;
                        for r in 0..d {
                            gx.set(r, c, inv_std[c] * (g.get(r, c) - mg - y.get(r, c) * mgy));
                        }
                    }
                    acc(*x, gx)?;
                }
                Op::SparseAttention {
                    q,
                    k,
                    v,
                    mask,
                    scale,
                    keep,
                    weights,
                } => {
                    let (qn, kn, vn) = (val(*q).transpose(), val(*k).transpose(), val(*v).transpose());
                    let gn = g.transpose();
                    let n = qn.rows();
                    let mut gq = Tensor::zeros(n, qn.cols());
                    let mut gk = Tensor::zeros(n, kn.cols());
                    let mut gv = Tensor::zeros(n, vn.cols());
                    let mut da = Vec::new();
                    for i in 0..n {
                        let row = mask.row(i);
                        let base = mask.row_start(i);
                        let gi = gn.row(i);
                        da.clear();
                        for (e, &j) in row.iter().enumerate() {
                            let factor = keep.as_ref().map_or(1.0, |kp| kp[base + e]);
                            let a = weights[base + e] * factor;
                            if a != 0.0 {
                                for (o, x) in gv.row_mut(j).iter_mut().zip(gi) {
                                    *o += a * x;
                                }
                            }
                            da.push(factor * dot(gi, vn.row(j)));
                        }
                        let w = &weights[base..base + row.len()];
                        let inner = dot(w, &da);
                        for (e, &j) in row.iter().enumerate() {
                            let ds = scale * w[e] * (da[e] - inner);
                            if ds == 0.0 {
                                continue;
                            }
                            {
                                let kj = kn.row(j);
                                for (o, x) in gq.row_mut(i).iter_mut().zip(kj) {
                                    *o += ds * x;
                                }
                            }
                            let qi = qn.row(i);
                            for (o, x) in gk.row_mut(j).iter_mut().zip(qi) {
                                *o += ds * x;
                            }
                        }
                    }
                    acc(*q, gq.transpose())?;
                    acc(*k, gk.transpose())?;
                    acc(*v, gv.transpose())?;
                }
                Op::CrossEntropy {
                    logits,
                    labels,
                    nodes: idx_nodes,
                } => {
                    let z = val(*logits);
                    let (c, n) = z.shape();
                    let mut gz = Tensor::zeros(c, n);
                    let w = g.get(0, 0) / idx_nodes.len() as f64;
                    for &i in idx_nodes.iter() {
                        let (lse, _) = log_sum_exp_col(z, i);
                        for r in 0..c {
                            let p = math::exp(z.get(r, i) - lse);
                            let t = if r == labels[i] { 1.0 } else { 0.0 };
                            gz.set(r, i, gz.get(r, i) + w * (p - t));
                        }
                    }
                    acc(*logits, gz)?;
                }
                Op::SpdLoss { emb, pairs } => {
                    let e = val(*emb);
                    let mut ge = Tensor::zeros(e.rows(), e.cols());
                    let w = 2.0 * g.get(0, 0) / pairs.len() as f64;
                    for &(i, j, s) in pairs.iter() {
                        let r = l1_col_distance(e, i, j) - s;
                        for d in 0..e.rows() {
                            let diff = e.get(d, i) - e.get(d, j);
                            let sg = if diff > 0.0 {
                                1.0
                            } else if diff < 0.0 {
                                -1.0
                            } else {
                                0.0
                            };
                            ge.set(d, i, ge.get(d, i) + w * r * sg);
                            ge.set(d, j, ge.get(d, j) - w * r * sg);
                        }
                    }
                    acc(*emb, ge)?;
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn log_sum_exp_col(z: &Tensor, col: usize) -> (f64, f64) {
    let mut max = f64::NEG_INFINITY;
    for r in 0..z.rows() {
        max = max.max(z.get(r, col));
    }
    let mut s = 0.0;
    for r in 0..z.rows() {
        s += math::exp(z.get(r, col) - max);
    }
    (max + math::log(s), max)
}

fn l1_col_distance(e: &Tensor, i: usize, j: usize) -> f64 {
    (0..e.rows()).map(|d| math::abs(e.get(d, i) - e.get(d, j))).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::finite_diff_check;
    use crate::rng;

    fn rand(r: usize, c: usize, seed: u64) -> Tensor {
        Tensor::randn(r, c, 1.0, &mut rng::from_seed(seed))
    }

    #[test]
    fn sum_gradient_is_ones() {
        let t = Tape::new();
        let w = t.leaf(rand(2, 2, 1));
        let l = t.sum(w).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(w).unwrap(), &Tensor::ones(2, 2));
    }

    #[test]
    fn relu_gradient_is_positive_indicator() {
        let t = Tape::new();
        let w = t.leaf(Tensor::from_rows(&[[-1.0, 0.0], [2.0, 3.0]]));
        let r = t.relu(w).unwrap();
        let l = t.sum(r).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(w).unwrap(), &Tensor::from_rows(&[[0.0, 0.0], [1.0, 1.0]]));
    }

    #[test]
    fn relu_values() {
        let t = Tape::new();
        let x = t.constant(Tensor::from_rows(&[[-1.0, 2.0]]));
        let r = t.relu(x).unwrap();
        assert_eq!(*t.value(r), Tensor::from_rows(&[[0.0, 2.0]]));
        assert_eq!(Activation::Relu.apply(0.0), 0.0);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let t = Tape::new();
        let w = t.leaf(Tensor::ones(2, 2));
        assert!(matches!(t.backward(w), Err(Error::Contract(_))));
    }

    #[test]
    fn matmul_sum_gradient_closed_form() {
        let a = rand(5, 7, 2);
        let b = rand(7, 3, 3);
        let t = Tape::new();
        let va = t.leaf(a);
        let vb = t.constant(b.clone());
        let p = t.matmul(va, vb).unwrap();
        let l = t.sum(p).unwrap();
        let g = t.backward(l).unwrap();
        let want = Tensor::ones(5, 3).matmul(&b.transpose()).unwrap();
        assert!(g.get(va).unwrap().max_abs_diff(&want) < 1e-12);
        assert!(g.get(vb).is_none());
    }

    #[test]
    fn softmax_examples() {
        let t = Tape::new();
        let s = t.constant(Tensor::filled(1, 4, 0.3));
        let y = t.masked_row_softmax(s, None).unwrap();
        assert!(t.value(y).data().iter().all(|&v| (v - 0.25).abs() < 1e-15));

        let s = t.constant(Tensor::from_rows(&[[0.0, 1e6]]));
        let y = t.masked_row_softmax(s, Some(&BoolMatrix::filled(1, 2, true))).unwrap();
        let v = t.value(y);
        assert!(v.get(0, 0).abs() < 1e-12 && (v.get(0, 1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_masked_matches_brute_force() {
        let scores = rand(4, 4, 9);
        let mask = BoolMatrix::from_fn(4, 4, |r, c| r == c || (r * 7 + c * 3) % 3 == 0);
        let t = Tape::new();
        let s = t.constant(scores.clone());
        let y = t.masked_row_softmax(s, Some(&mask)).unwrap();
        let y = t.value(y);
        for r in 0..4 {
            let z: f64 = (0..4).filter(|&c| mask.get(r, c)).map(|c| scores.get(r, c).exp()).sum();
            let mut row_sum = 0.0;
            for c in 0..4 {
                let want = if mask.get(r, c) { scores.get(r, c).exp() / z } else { 0.0 };
                assert!((y.get(r, c) - want).abs() < 1e-14);
                if !mask.get(r, c) {
                    assert_eq!(y.get(r, c), 0.0);
                }
                row_sum += y.get(r, c);
            }
            assert!((row_sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_empty_row_errors() {
        let t = Tape::new();
        let s = t.constant(Tensor::zeros(2, 2));
        let mask = BoolMatrix::from_fn(2, 2, |r, _| r == 0);
        assert_eq!(t.masked_row_softmax(s, Some(&mask)).unwrap_err(), Error::EmptyNeighborhood { row: 1 });
    }

    #[test]
    fn gradcheck_elementary_ops() {
        let x = rand(3, 3, 4);
        let c = rand(3, 3, 5);
        let bias = rand(3, 1, 6);
        type Op = alloc::boxed::Box<dyn Fn(&Tape, Var) -> Result<Var>>;
        let ops: Vec<(&str, Op)> = vec![
            ("tanh", alloc::boxed::Box::new(|t: &Tape, v| {
                let y = t.tanh(v)?;
                t.sum(y)
            })),
            ("matmul", alloc::boxed::Box::new(move |t: &Tape, v| {
                let k = t.constant(c.clone());
                let y = t.matmul(v, k)?;
                let y = t.hadamard(y, y)?;
                t.sum(y)
            })),
            ("bias+transpose", alloc::boxed::Box::new(move |t: &Tape, v| {
                let b = t.constant(bias.clone());
                let y = t.add_bias(v, b)?;
                let y = t.transpose(y)?;
                let y = t.tanh(y)?;
                t.mean(y)
            })),
            ("softmax", alloc::boxed::Box::new(|t: &Tape, v| {
                let mask = BoolMatrix::from_fn(3, 3, |r, c| r <= c);
                let y = t.masked_row_softmax(v, Some(&mask))?;
                let w = t.constant(Tensor::from_fn(3, 3, |r, c| (r + 2 * c) as f64));
                let y = t.hadamard(y, w)?;
                t.sum(y)
            })),
            ("layer_norm", alloc::boxed::Box::new(|t: &Tape, v| {
                let y = t.layer_norm_cols(v, 1e-5)?;
                let w = t.constant(Tensor::from_fn(3, 3, |r, c| (r * 3 + c) as f64 * 0.3 - 1.0));
                let y = t.hadamard(y, w)?;
                t.sum(y)
            })),
            ("concat", alloc::boxed::Box::new(|t: &Tape, v| {
                let a = t.tanh(v)?;
                let y = t.concat_rows(&[v, a])?;
                let y = t.hadamard(y, y)?;
                t.sum(y)
            })),
        ];
        for (name, f) in ops {
            let err = finite_diff_check(|t, v| f(t, v), &x, 1e-6).unwrap();
            assert!(err < 1e-6, "{name}: {err}");
        }
    }

    #[test]
    fn cross_entropy_examples() {
        let t = Tape::new();
        let z = t.leaf(Tensor::zeros(5, 3));
        let l = t
            .cross_entropy(z, Arc::new(vec![0, 1, 4]), Arc::new(vec![0, 1, 2]))
            .unwrap();
        assert!((t.value(l).get(0, 0) - 5f64.ln()).abs() < 1e-14);

        let big = Tensor::from_rows(&[[1e3, -1e3], [-1e3, 1e3]]);
        let z = t.constant(big);
        let l = t.cross_entropy(z, Arc::new(vec![0, 1]), Arc::new(vec![0, 1])).unwrap();
        assert!(t.value(l).get(0, 0) < 1e-12);
        assert!(t.cross_entropy(z, Arc::new(vec![0, 1]), Arc::new(vec![])).is_err());
    }

    #[test]
    fn cross_entropy_matches_scalar_loop_and_fd() {
        let z = rand(4, 6, 11);
        let labels = vec![0, 3, 2, 1, 1, 0];
        let nodes = vec![0, 2, 3, 5];
        let t = Tape::new();
        let v = t.constant(z.clone());
        let l = t.cross_entropy(v, Arc::new(labels.clone()), Arc::new(nodes.clone())).unwrap();
        let mut want = 0.0;
        for &i in &nodes {
            let s: f64 = (0..4).map(|r| z.get(r, i).exp()).sum();
            want -= (z.get(labels[i], i).exp() / s).ln();
        }
        want /= nodes.len() as f64;
        assert!((t.value(l).get(0, 0) - want).abs() < 1e-12);
        let err = finite_diff_check(
            |t, v| t.cross_entropy(v, Arc::new(labels.clone()), Arc::new(nodes.clone())),
            &z,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn spd_loss_examples() {
        let t = Tape::new();
        let e = t.constant(Tensor::from_rows(&[[3.0, 0.0], [-4.0, 0.0]]));
        let l = t.spd_loss(e, Arc::new(vec![(0, 1, 7.0)])).unwrap();
        assert_eq!(t.value(l).get(0, 0), 0.0);
        let e = t.constant(Tensor::ones(2, 3));
        let l = t.spd_loss(e, Arc::new(vec![(0, 1, 0.0), (1, 2, 0.0)])).unwrap();
        assert_eq!(t.value(l).get(0, 0), 0.0);
        assert!(t.spd_loss(e, Arc::new(vec![(0, 3, 1.0)])).is_err());
    }

    #[test]
    fn spd_loss_matches_scalar_loop_and_is_translation_invariant() {
        let emb = rand(3, 8, 12);
        let pairs = vec![(0, 1, 2.0), (2, 7, 0.5), (3, 3, 0.0), (4, 6, 4.0)];
        let t = Tape::new();
        let v = t.constant(emb.clone());
        let l = t.spd_loss(v, Arc::new(pairs.clone())).unwrap();
        let mut want = 0.0;
        for &(i, j, s) in &pairs {
            let d: f64 = (0..3).map(|r| (emb.get(r, i) - emb.get(r, j)).abs()).sum();
            want += (d - s).powi(2);
        }
        want /= pairs.len() as f64;
        let got = t.value(l).get(0, 0);
        assert!((got - want).abs() < 1e-12);

        let shifted = Tensor::from_fn(3, 8, |r, c| emb.get(r, c) + [1.5, -2.0, 0.25][r]);
        let vs = t.constant(shifted);
        let ls = t.spd_loss(vs, Arc::new(pairs.clone())).unwrap();
        assert!((t.value(ls).get(0, 0) - got).abs() < 1e-12);

        let err = finite_diff_check(|t, v| t.spd_loss(v, Arc::new(pairs.clone())), &emb, 1e-6).unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn sparse_attention_gradients() {
        let n = 6;
        let mask = Arc::new(KHopMask::from_rows(
            (0..n).map(|i| vec![(i + 1) % n, (i + 3) % n]).collect(),
        ));
        let q0 = rand(2, n, 20);
        let k0 = rand(2, n, 21);
        let v0 = rand(3, n, 22);
        let keep = Arc::new((0..mask.nnz()).map(|e| if e % 4 == 1 { 0.0 } else { 1.25 }).collect::<Vec<_>>());
        let w = rand(3, n, 23);
        for which in 0..3 {
            let (q0, k0, v0, w, mask, keep) =
                (q0.clone(), k0.clone(), v0.clone(), w.clone(), mask.clone(), keep.clone());
            let x = [&q0, &k0, &v0][which].clone();
            let err = finite_diff_check(
                move |t, x| {
                    let mut vars = [t.constant(q0.clone()), t.constant(k0.clone()), t.constant(v0.clone())];
                    vars[which] = x;
                    let inputs = AttentionInputs { q: vars[0], k: vars[1], v: vars[2] };
                    let y = t.sparse_attention(&inputs, mask.clone(), 0.7, Some(keep.clone()))?;
                    let wv = t.constant(w.clone());
                    let y = t.hadamard(y, wv)?;
                    t.sum(y)
                },
                &x,
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-6, "input {which}: {err}");
        }
    }

    #[test]
    fn sparse_attention_rows_are_stochastic() {
        let n = 7;
        let t = Tape::new();
        let mask = Arc::new(KHopMask::from_rows((0..n).map(|i| vec![(i + 2) % n]).collect()));
        let q = t.constant(rand(3, n, 1));
        let k = t.constant(rand(3, n, 2));
        let v = t.constant(rand(3, n, 3));
        let y = t.sparse_attention(&AttentionInputs { q, k, v }, mask.clone(), 1.0, None).unwrap();
        let (_, w) = t.attention_weights(y).unwrap();
        for i in 0..n {
            let s = mask.row_start(i);
            let row = &w[s..s + mask.row(i).len()];
            assert!(row.iter().all(|&a| a >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn spmm_gradient() {
        let s = Arc::new(
            CsrMatrix::from_triplets(4, &[(0, 1, 2.0), (1, 0, 0.5), (2, 3, -1.0), (3, 3, 1.5), (1, 2, 0.3)]).unwrap(),
        );
        let x = rand(2, 4, 30);
        let err = finite_diff_check(
            |t, v| {
                let y = t.spmm(v, s.clone())?;
                let y = t.tanh(y)?;
                t.sum(y)
            },
            &x,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }
}
