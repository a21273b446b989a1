//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! A [`Graph`] is built fresh for every training step. Nodes are appended in
//! evaluation order, so the tape order is already a topological order and
//! the backward sweep simply walks it in reverse. Parameters enter as leaves
//! that require gradients; everything else that should stay fixed enters as
//! a constant and never receives a gradient.

use std::ops::Range;

use super::matrix::{dot, Matrix};
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Dropout(Var, Vec<f64>),
    Dot(Var, Var),
    RowDots(Var, Var),
    GatherRows(Var, Vec<usize>),
    VStack(Vec<Var>),
    HStack(Vec<Var>),
    Sum(Var),
    BceMean(Var, Vec<f64>),
    InfoNce(Box<InfoNceCache>),
}

#[derive(Debug)]
struct InfoNceCache {
    logits: Var,
    groups: Vec<Range<usize>>,
    probs: Vec<f64>,
    log_form: bool,
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    grad: Option<Matrix>,
    op: Op,
    requires_grad: bool,
}

/// Clamp applied to predicted probabilities before taking logs.
pub const PROB_CLAMP: f64 = 1e-12;

/// Inputs whose magnitude exceeds this use the saturated branch of the
/// sigmoid.
pub const SIGMOID_SATURATION: f64 = 30.0;

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
}

fn same_shape(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

pub fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else if x > -SIGMOID_SATURATION {
        let e = x.exp();
        e / (1.0 + e)
    } else {
        // 1 + e^x == 1 to within rounding here
        x.exp()
    }
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

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A detached input. Never receives gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Detached copy of `x`.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, x: Var) -> &Matrix {
        &self.nodes[x.0].value
    }

    pub fn grad(&self, x: Var) -> Option<&Matrix> {
        self.nodes[x.0].grad.as_ref()
    }

    pub fn requires_grad(&self, x: Var) -> bool {
        self.nodes[x.0].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// Adds a `1 x cols` bias row to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::Dimension {
                op: "add_bias",
                left: xv.shape(),
                right: bv.shape(),
            });
        }
        let mut value = xv.clone();
        for r in 0..value.rows() {
            for (o, b) in value.row_mut(r).iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let rg = self.needs(&[x, bias]);
        Ok(self.push(value, Op::AddBias(x, bias), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.value(x).map(|v| v * factor);
        let rg = self.needs(&[x]);
        self.push(value, Op::Scale(x, factor), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        let rg = self.needs(&[x]);
        self.push(value, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(stable_sigmoid);
        let rg = self.needs(&[x]);
        self.push(value, Op::Sigmoid(x), rg)
    }

    /// Inverted dropout. A rate of zero returns `x` itself.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut RngStream) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let n = self.value(x).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.uniform() < rate { 0.0 } else { keep })
            .collect();
        let xv = self.value(x);
        let data = xv.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Matrix::new(xv.rows(), xv.cols(), data)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::Dropout(x, mask), rg))
    }

    /// Inner product of two equal-length vectors (row or column).
    pub fn dot(&mut self, u: Var, v: Var) -> Result<Var> {
        let (uv, vv) = (self.value(u), self.value(v));
        if !uv.is_vector() || !vv.is_vector() || uv.len() != vv.len() {
            return Err(Error::Dimension {
                op: "dot",
                left: uv.shape(),
                right: vv.shape(),
            });
        }
        let value = Matrix::scalar(dot(uv.data(), vv.data()));
        let rg = self.needs(&[u, v]);
        Ok(self.push(value, Op::Dot(u, v), rg))
    }

    /// Per-row inner products of two equally shaped matrices, as a column.
    pub fn row_dots(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("row_dots", self.value(a), self.value(b))?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = (0..av.rows()).map(|r| dot(av.row(r), bv.row(r))).collect();
        let value = Matrix::new(av.rows(), 1, data)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::RowDots(a, b), rg))
    }

    pub fn gather_rows(&mut self, x: Var, rows: Vec<usize>) -> Result<Var> {
        let xv = self.value(x);
        if let Some(&bad) = rows.iter().find(|&&r| r >= xv.rows()) {
            return Err(Error::Index(format!(
                "row {bad} of a {}x{} matrix",
                xv.rows(),
                xv.cols()
            )));
        }
        let mut value = Matrix::zeros(rows.len(), xv.cols());
        for (i, &r) in rows.iter().enumerate() {
            value.row_mut(i).copy_from_slice(xv.row(r));
        }
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::GatherRows(x, rows), rg))
    }

    pub fn vstack(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("vstack of nothing"))?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.cols() != cols {
                return Err(Error::Dimension {
                    op: "vstack",
                    left: self.value(*first).shape(),
                    right: pv.shape(),
                });
            }
            rows += pv.rows();
            data.extend_from_slice(pv.data());
        }
        let value = Matrix::new(rows, cols, data)?;
        let rg = self.needs(parts);
        Ok(self.push(value, Op::VStack(parts.to_vec()), rg))
    }

    pub fn hstack(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("hstack of nothing"))?;
        let rows = self.value(*first).rows();
        let mut cols = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.rows() != rows {
                return Err(Error::Dimension {
                    op: "hstack",
                    left: self.value(*first).shape(),
                    right: pv.shape(),
                });
            }
            cols += pv.cols();
        }
        let mut value = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            let out = value.row_mut(r);
            for &p in parts {
                let src = self.nodes[p.0].value.row(r);
                out[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        let rg = self.needs(parts);
        Ok(self.push(value, Op::HStack(parts.to_vec()), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Matrix::scalar(self.value(x).data().iter().sum());
        let rg = self.needs(&[x]);
        self.push(value, Op::Sum(x), rg)
    }

    /// Mean binary cross-entropy of a column of probabilities against 0/1
    /// labels. Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`
    /// before the logs; the gradient is evaluated at the clamped point.
    pub fn bce_mean(&mut self, probs: Var, labels: &[f64]) -> Result<Var> {
        let pv = self.value(probs);
        if pv.cols() != 1 || pv.rows() != labels.len() {
            return Err(Error::Dimension {
                op: "bce_mean",
                left: pv.shape(),
                right: (labels.len(), 1),
            });
        }
        if labels.is_empty() {
            return Err(Error::contract("cross-entropy over an empty batch"));
        }
        let total: f64 = pv.data().iter().zip(labels).map(|(&p, &y)| bce(y, p)).sum();
        let value = Matrix::scalar(total / labels.len() as f64);
        let rg = self.needs(&[probs]);
        Ok(self.push(value, Op::BceMean(probs, labels.to_vec()), rg))
    }

    /// Weighted InfoNCE over groups of logits.
    ///
    /// `logits` is a column; each range in `groups` selects one anchor's
    /// candidates with the positive first. `log_weights[j]` is added to
    /// logit `j` (a multiplicative weight `s` inside the exponential). The
    /// result is the mean over groups of `-ln p_pos` when `log_form`, or of
    /// `-p_pos` otherwise, where `p` is the softmax within the group.
    pub fn info_nce(
        &mut self,
        logits: Var,
        groups: Vec<Range<usize>>,
        log_weights: &[f64],
        log_form: bool,
    ) -> Result<Var> {
        let lv = self.value(logits);
        if lv.cols() != 1 || lv.rows() != log_weights.len() {
            return Err(Error::Dimension {
                op: "info_nce",
                left: lv.shape(),
                right: (log_weights.len(), 1),
            });
        }
        if groups.is_empty() {
            return Err(Error::contract("info_nce needs at least one group"));
        }
        let mut probs = vec![0.0; lv.rows()];
        let mut total = 0.0;
        for g in &groups {
            if g.len() < 2 || g.end > lv.rows() {
                return Err(Error::contract(format!(
                    "group {g:?} needs a positive and at least one negative"
                )));
            }
            let shifted: Vec<f64> = g.clone().map(|j| lv.get(j, 0) + log_weights[j]).collect();
            let max = shifted.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + shifted.iter().map(|a| (a - max).exp()).sum::<f64>().ln();
            for (j, a) in g.clone().zip(&shifted) {
                probs[j] = (a - lse).exp();
            }
            total += if log_form {
                lse - shifted[0]
            } else {
                -probs[g.start]
            };
        }
        let value = Matrix::scalar(total / groups.len() as f64);
        let rg = self.needs(&[logits]);
        let cache = InfoNceCache {
            logits,
            groups,
            probs,
            log_form,
        };
        Ok(self.push(value, Op::InfoNce(Box::new(cache)), rg))
    }

    /// Per-group loss values of an [`info_nce`](Self::info_nce) node.
    pub fn info_nce_terms(&self, node: Var) -> Option<Vec<f64>> {
        match &self.nodes[node.0].op {
            Op::InfoNce(c) => Some(
                c.groups
                    .iter()
                    .map(|g| {
                        let p = c.probs[g.start];
                        if c.log_form {
                            -p.ln()
                        } else {
                            -p
                        }
                    })
                    .collect(),
            ),
            _ => None,
        }
    }

    /// Reverse sweep from a scalar root. May be called once per graph.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::contract("backward already ran on this graph"));
        }
        let shape = self.value(root).shape();
        if shape != (1, 1) {
            return Err(Error::contract(format!(
                "backward needs a scalar root, got {shape:?}"
            )));
        }
        self.backward_done = true;
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        self.nodes[root.0].grad = Some(Matrix::scalar(1.0));
        for i in (0..=root.0).rev() {
            let Some(upstream) = self.nodes[i].grad.take() else {
                continue;
            };
            self.propagate(i, &upstream)?;
            self.nodes[i].grad = Some(upstream);
        }
        Ok(())
    }

    fn accumulate(&mut self, target: Var, contribution: Matrix) {
        let node = &mut self.nodes[target.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(g) => g.add_assign(&contribution),
            None => node.grad = Some(contribution),
        }
    }

    fn check_parent(&self, child: usize, parent: Var) -> Result<()> {
        if parent.0 >= child {
            return Err(Error::Graph(format!(
                "node {child} depends on later node {}; cycle in tape",
                parent.0
            )));
        }
        Ok(())
    }

    fn propagate(&mut self, i: usize, g: &Matrix) -> Result<()> {
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        let result = self.propagate_op(i, &op, g);
        self.nodes[i].op = op;
        result
    }

    fn propagate_op(&mut self, i: usize, op: &Op, g: &Matrix) -> Result<()> {
        match op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                self.check_parent(i, *a)?;
                self.check_parent(i, *b)?;
                let ga = g.matmul_nt(self.value(*b));
                let gb = self.value(*a).matmul_tn(g);
                self.accumulate(*a, ga);
                self.accumulate(*b, gb);
            }
            Op::AddBias(x, b) => {
                self.check_parent(i, *x)?;
                self.check_parent(i, *b)?;
                let mut gb = Matrix::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (o, v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                self.accumulate(*x, g.clone());
                self.accumulate(*b, gb);
            }
            Op::Add(a, b) => {
                self.check_parent(i, *a)?;
                self.check_parent(i, *b)?;
                self.accumulate(*a, g.clone());
                self.accumulate(*b, g.clone());
            }
            Op::Scale(x, factor) => {
                self.check_parent(i, *x)?;
                self.accumulate(*x, g.map(|v| v * factor));
            }
            Op::Relu(x) => {
                self.check_parent(i, *x)?;
                let xv = self.value(*x);
                let data = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(&gv, &v)| if v > 0.0 { gv } else { 0.0 })
                    .collect();
                let contribution = Matrix::new(g.rows(), g.cols(), data)?;
                self.accumulate(*x, contribution);
            }
            Op::Sigmoid(x) => {
                self.check_parent(i, *x)?;
                let yv = &self.nodes[i].value;
                let data = g
                    .data()
                    .iter()
                    .zip(yv.data())
                    .map(|(&gv, &y)| gv * y * (1.0 - y))
                    .collect();
                let contribution = Matrix::new(g.rows(), g.cols(), data)?;
                self.accumulate(*x, contribution);
            }
            Op::Dropout(x, mask) => {
                self.check_parent(i, *x)?;
                let data = g.data().iter().zip(mask).map(|(gv, m)| gv * m).collect();
                let contribution = Matrix::new(g.rows(), g.cols(), data)?;
                self.accumulate(*x, contribution);
            }
            Op::Dot(u, v) => {
                self.check_parent(i, *u)?;
                self.check_parent(i, *v)?;
                let s = g.item();
                let gu = self.value(*v).data().iter().map(|x| x * s).collect();
                let gv = self.value(*u).data().iter().map(|x| x * s).collect();
                let (ur, uc) = self.value(*u).shape();
                let (vr, vc) = self.value(*v).shape();
                self.accumulate(*u, Matrix::new(ur, uc, gu)?);
                self.accumulate(*v, Matrix::new(vr, vc, gv)?);
            }
            Op::RowDots(a, b) => {
                self.check_parent(i, *a)?;
                self.check_parent(i, *b)?;
                let (av, bv) = (self.value(*a), self.value(*b));
                let mut ga = Matrix::zeros(av.rows(), av.cols());
                let mut gb = Matrix::zeros(bv.rows(), bv.cols());
                for r in 0..av.rows() {
                    let s = g.get(r, 0);
                    if s == 0.0 {
                        continue;
                    }
                    for ((o, &bb), (p, &aa)) in ga
                        .row_mut(r)
                        .iter_mut()
                        .zip(bv.row(r))
                        .zip(gb.row_mut(r).iter_mut().zip(av.row(r)))
                    {
                        *o = s * bb;
                        *p = s * aa;
                    }
                }
                self.accumulate(*a, ga);
                self.accumulate(*b, gb);
            }
            Op::GatherRows(x, rows) => {
                self.check_parent(i, *x)?;
                let (xr, xc) = self.value(*x).shape();
                let mut gx = Matrix::zeros(xr, xc);
                for (k, &r) in rows.iter().enumerate() {
                    for (o, v) in gx.row_mut(r).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                self.accumulate(*x, gx);
            }
            Op::VStack(parts) => {
                let mut start = 0;
                for &p in parts {
                    self.check_parent(i, p)?;
                    let (pr, pc) = self.value(p).shape();
                    let slice = g.data()[start * pc..(start + pr) * pc].to_vec();
                    start += pr;
                    self.accumulate(p, Matrix::new(pr, pc, slice)?);
                }
            }
            Op::HStack(parts) => {
                let mut offset = 0;
                for &p in parts {
                    self.check_parent(i, p)?;
                    let (pr, pc) = self.value(p).shape();
                    let mut gp = Matrix::zeros(pr, pc);
                    for r in 0..pr {
                        gp.row_mut(r)
                            .copy_from_slice(&g.row(r)[offset..offset + pc]);
                    }
                    offset += pc;
                    self.accumulate(p, gp);
                }
            }
            Op::Sum(x) => {
                self.check_parent(i, *x)?;
                let (r, c) = self.value(*x).shape();
                self.accumulate(*x, Matrix::filled(r, c, g.item()));
            }
            Op::BceMean(p, labels) => {
                self.check_parent(i, *p)?;
                let n = labels.len() as f64;
                let s = g.item();
                let data = self
                    .value(*p)
                    .data()
                    .iter()
                    .zip(labels)
                    .map(|(&prob, &y)| {
                        let q = prob.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                        s * (-y / q + (1.0 - y) / (1.0 - q)) / n
                    })
                    .collect();
                self.accumulate(*p, Matrix::new(labels.len(), 1, data)?);
            }
            Op::InfoNce(cache) => {
                self.check_parent(i, cache.logits)?;
                let rows = self.value(cache.logits).rows();
                let scale = g.item() / cache.groups.len() as f64;
                let mut gl = Matrix::zeros(rows, 1);
                for grp in &cache.groups {
                    let p_pos = cache.probs[grp.start];
                    for j in grp.clone() {
                        let indicator = if j == grp.start { 1.0 } else { 0.0 };
                        let d = cache.probs[j] - indicator;
                        let d = if cache.log_form { d } else { p_pos * d };
                        gl.set(j, 0, scale * d);
                    }
                }
                self.accumulate(cache.logits, gl);
            }
        }
        Ok(())
    }
}

/// Binary cross-entropy with the probability clamped away from 0 and 1.
pub fn bce(label: f64, prob: f64) -> f64 {
    let q = prob.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(label * q.ln() + (1.0 - label) * (1.0 - q).ln())
}
