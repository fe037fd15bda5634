use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use super::{matmul_nt_raw, matmul_tn_raw, sigmoid, softplus, Tensor};
use crate::error::{Error, Result};

/// Zero-norm guard for cosine similarity and row normalization.
pub const NORM_EPS: f64 = 1e-12;

static NEXT_TAPE_ID: AtomicUsize = AtomicUsize::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: usize,
    id: usize,
}

/// Directed neighborhoods in compressed sparse row form, consumed by
/// [`Tape::graph_attention`]. Node `i` attends over
/// `neighbors[offsets[i]..offsets[i + 1]]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Neighborhoods {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
}

impl Neighborhoods {
    /// Builds neighborhoods from per-node lists. Lists must be non-empty.
    pub fn from_lists(lists: &[Vec<usize>]) -> Result<Self> {
        let n = lists.len();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut neighbors = Vec::new();
        offsets.push(0);
        for (i, list) in lists.iter().enumerate() {
            if list.is_empty() {
                return Err(Error::Domain {
                    op: "neighborhoods",
                    detail: format!("node {i} has an empty neighborhood"),
                });
            }
            if let Some(&bad) = list.iter().find(|&&j| j >= n) {
                return Err(Error::Domain {
                    op: "neighborhoods",
                    detail: format!("node {i} lists neighbor {bad} outside 0..{n}"),
                });
            }
            neighbors.extend_from_slice(list);
            offsets.push(neighbors.len());
        }
        Ok(Self { offsets, neighbors })
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_edges(&self) -> usize {
        self.neighbors.len()
    }

    pub fn of(&self, node: usize) -> &[usize] {
        &self.neighbors[self.offsets[node]..self.offsets[node + 1]]
    }

    fn range(&self, node: usize) -> std::ops::Range<usize> {
        self.offsets[node]..self.offsets[node + 1]
    }
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    FixedMatMul(Arc<Tensor>, usize),
    Transpose(usize),
    Reshape(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    Sigmoid(usize),
    Softplus(usize),
    Log(usize),
    Abs(usize),
    Elu(usize),
    AddRow(usize, usize),
    Sum(usize),
    Mean(usize),
    SumRows(usize),
    Select(usize, usize),
    GatherRows(usize, Vec<usize>),
    OuterRows(usize, usize),
    NormalizeRows(usize, Vec<f64>),
    CosineRows(usize, usize),
    BceWithLogits(usize, Arc<[f64]>),
    L1DistAll(usize, usize),
    ConcatCols(Vec<usize>),
    GraphAttention {
        input: usize,
        attn: usize,
        graph: Arc<Neighborhoods>,
        slope: f64,
        alpha: Vec<f64>,
        pre: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Record of a dynamic computation for reverse-mode differentiation.
///
/// A tape is rebuilt for every training step. It is single-owner; share
/// finished [`Tensor`] values across threads instead.
pub struct Tape {
    id: usize,
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients produced by [`Tape::backward`], keyed by [`Var`].
pub struct Gradients {
    tape: usize,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros shaped like `like` when nothing flowed into it.
    pub fn get_or_zeros(&self, var: Var, like: &Tensor) -> Tensor {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn same_or_scalar(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Vec<usize>> {
    if a.shape() == b.shape() || b.len() == 1 {
        Ok(a.shape().to_vec())
    } else if a.len() == 1 {
        Ok(b.shape().to_vec())
    } else {
        Err(Error::shape(op, a.shape(), b.shape()))
    }
}

fn broadcast_binary(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    if a.len() == b.len() {
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
    } else if b.len() == 1 {
        let y = b.data()[0];
        a.data().iter().map(|&x| f(x, y)).collect()
    } else {
        let x = a.data()[0];
        b.data().iter().map(|&y| f(x, y)).collect()
    }
}

/// Sum a gradient back down to an operand's size (handles scalar broadcast).
fn reduce_to(grad: Vec<f64>, len: usize) -> Vec<f64> {
    if grad.len() == len {
        grad
    } else {
        vec![grad.iter().sum()]
    }
}

fn row_norms(t: &Tensor) -> Vec<f64> {
    let c = t.cols();
    t.data()
        .chunks(c.max(1))
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect()
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.id >= self.nodes.len() {
            return Err(Error::Tape(format!("variable {} does not belong to this tape", v.id)));
        }
        Ok(v.id)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[usize]) -> Var {
        let needs_grad = inputs.iter().any(|&i| self.nodes[i].needs_grad);
        let id = self.nodes.len();
        self.nodes.push(Node { value, op, needs_grad });
        Var { tape: self.id, id }
    }

    /// Records a leaf; it is differentiated iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs_grad = t.requires_grad();
        let id = self.nodes.len();
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad,
        });
        Var { tape: self.id, id }
    }

    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_grad())
    }

    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.set_requires_grad(false);
        self.leaf(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.id].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let out = self.nodes[ia].value.matmul(&self.nodes[ib].value)?;
        Ok(self.push(out, Op::MatMul(ia, ib), &[ia, ib]))
    }

    /// `lhs · b` where `lhs` is a shared, never-differentiated matrix.
    ///
    /// Avoids copying large frozen inputs into every tape.
    pub fn fixed_matmul(&mut self, lhs: &Arc<Tensor>, b: Var) -> Result<Var> {
        let ib = self.idx(b)?;
        let out = lhs.matmul(&self.nodes[ib].value)?;
        Ok(self.push(out, Op::FixedMatMul(Arc::clone(lhs), ib), &[ib]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = self.nodes[ia].value.transpose()?;
        Ok(self.push(out, Op::Transpose(ia), &[ia]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ia = self.idx(a)?;
        let mut out = self.nodes[ia].value.reshape(shape)?;
        out.set_requires_grad(false);
        Ok(self.push(out, Op::Reshape(ia), &[ia]))
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        make: impl Fn(usize, usize) -> Op,
    ) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (ta, tb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let shape = same_or_scalar(op, ta, tb)?;
        let data = broadcast_binary(ta, tb, f);
        let out = Tensor::new(&shape, data)?;
        Ok(self.push(out, make(ia, ib), &[ia, ib]))
    }

    /// Elementwise sum; either side may be a single-element tensor.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    /// Elementwise (Hadamard) product; either side may be a single-element tensor.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, make: impl Fn(usize) -> Op) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = self.nodes[ia].value.map(f);
        Ok(self.push(out, make(ia), &[ia]))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| -x, Op::Neg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, |x| x * c, |i| Op::Scale(i, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, |x| x + c, Op::AddScalar)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, super::relu, Op::Relu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, sigmoid, Op::Sigmoid)
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(a, softplus, Op::Softplus)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::abs, Op::Abs)
    }

    pub fn elu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| if x > 0.0 { x } else { x.exp_m1() }, Op::Elu)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        if let Some(bad) = self.nodes[ia].value.data().iter().find(|&&x| x <= 0.0) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("non-positive argument {bad}"),
            });
        }
        self.unary(a, f64::ln, Op::Log)
    }

    /// Adds a length-`n` row (shape `[n]` or `[1, n]`) to every row of an `m×n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ia, ir) = (self.idx(a)?, self.idx(row)?);
        let (ta, tr) = (&self.nodes[ia].value, &self.nodes[ir].value);
        let (m, n) = ta.dims2()?;
        if tr.len() != n {
            return Err(Error::shape("add_row", ta.shape(), tr.shape()));
        }
        let mut data = ta.data().to_vec();
        for r in data.chunks_mut(n) {
            for (x, &b) in r.iter_mut().zip(tr.data()) {
                *x += b;
            }
        }
        let out = Tensor::new(&[m, n], data)?;
        Ok(self.push(out, Op::AddRow(ia, ir), &[ia, ir]))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let s = self.nodes[ia].value.data().iter().sum();
        Ok(self.push(Tensor::scalar(s), Op::Sum(ia), &[ia]))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let t = &self.nodes[ia].value;
        if t.is_empty() {
            return Err(Error::Domain {
                op: "mean",
                detail: "empty tensor".into(),
            });
        }
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        Ok(self.push(Tensor::scalar(s), Op::Mean(ia), &[ia]))
    }

    /// Row sums of an `m×n` matrix, shape `[m]`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let t = &self.nodes[ia].value;
        let (m, n) = t.dims2()?;
        let data = (0..m).map(|i| t.data()[i * n..(i + 1) * n].iter().sum()).collect();
        Ok(self.push(Tensor::vector(data), Op::SumRows(ia), &[ia]))
    }

    /// Single element `a[i]` (flat index) as a scalar.
    pub fn select(&mut self, a: Var, i: usize) -> Result<Var> {
        let ia = self.idx(a)?;
        let t = &self.nodes[ia].value;
        let v = *t.data().get(i).ok_or_else(|| Error::Domain {
            op: "select",
            detail: format!("index {i} out of range for {} elements", t.len()),
        })?;
        Ok(self.push(Tensor::scalar(v), Op::Select(ia, i), &[ia]))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = self.nodes[ia].value.gather_rows(idx)?;
        Ok(self.push(out, Op::GatherRows(ia, idx.to_vec()), &[ia]))
    }

    /// Row-wise outer product: `out[b, i·q + l] = a[b, i] · c[b, l]` for `a: B×p`, `c: B×q`.
    pub fn outer_rows(&mut self, a: Var, c: Var) -> Result<Var> {
        let (ia, ic) = (self.idx(a)?, self.idx(c)?);
        let (ta, tc) = (&self.nodes[ia].value, &self.nodes[ic].value);
        let (m, p) = ta.dims2()?;
        let (m2, q) = tc.dims2()?;
        if m != m2 {
            return Err(Error::shape("outer_rows", ta.shape(), tc.shape()));
        }
        let mut data = Vec::with_capacity(m * p * q);
        for b in 0..m {
            let (ar, cr) = (ta.row(b), tc.row(b));
            for &x in ar {
                data.extend(cr.iter().map(|&y| x * y));
            }
        }
        let out = Tensor::new(&[m, p * q], data)?;
        Ok(self.push(out, Op::OuterRows(ia, ic), &[ia, ic]))
    }

    /// Divides each row by `max(‖row‖, ε)`.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let t = &self.nodes[ia].value;
        let (_, n) = t.dims2()?;
        let norms = row_norms(t);
        let mut data = t.data().to_vec();
        for (r, &nr) in data.chunks_mut(n.max(1)).zip(&norms) {
            let d = nr.max(NORM_EPS);
            r.iter_mut().for_each(|x| *x /= d);
        }
        let out = Tensor::new(t.shape(), data)?;
        Ok(self.push(out, Op::NormalizeRows(ia, norms), &[ia]))
    }

    /// Per-row cosine similarity of `a: n×d` against `b: n×d` (paired rows)
    /// or `b: 1×d` (broadcast). Output shape `[n]`.
    pub fn cosine_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (ta, tb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let (n, d) = ta.dims2()?;
        let (nb, db) = tb.dims2()?;
        if d != db || (nb != n && nb != 1) || d == 0 {
            return Err(Error::shape("cosine_rows", ta.shape(), tb.shape()));
        }
        let na = row_norms(ta);
        let nbn = row_norms(tb);
        let data = (0..n)
            .map(|i| {
                let j = if nb == 1 { 0 } else { i };
                let dot: f64 = ta.row(i).iter().zip(tb.row(j)).map(|(x, y)| x * y).sum();
                dot / (na[i].max(NORM_EPS) * nbn[j].max(NORM_EPS))
            })
            .collect();
        Ok(self.push(Tensor::vector(data), Op::CosineRows(ia, ib), &[ia, ib]))
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against `targets`,
    /// computed as `softplus(x) - t·x` for numerical stability.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Tensor) -> Result<Var> {
        let il = self.idx(logits)?;
        let tl = &self.nodes[il].value;
        if tl.shape() != targets.shape() {
            return Err(Error::shape("bce_with_logits", tl.shape(), targets.shape()));
        }
        if tl.is_empty() {
            return Err(Error::Domain {
                op: "bce_with_logits",
                detail: "empty logits".into(),
            });
        }
        let s: f64 = tl
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&x, &t)| softplus(x) - t * x)
            .sum();
        let loss = s / tl.len() as f64;
        let t: Arc<[f64]> = targets.data().into();
        Ok(self.push(Tensor::scalar(loss), Op::BceWithLogits(il, t), &[il]))
    }

    /// Pairwise L1 distances `out[b, i] = ‖q_b − c_i‖₁` for `q: B×d`, `c: N×d`.
    pub fn l1_dist_all(&mut self, q: Var, c: Var) -> Result<Var> {
        let (iq, ic) = (self.idx(q)?, self.idx(c)?);
        let (tq, tc) = (&self.nodes[iq].value, &self.nodes[ic].value);
        let (b, d) = tq.dims2()?;
        let (n, d2) = tc.dims2()?;
        if d != d2 {
            return Err(Error::shape("l1_dist_all", tq.shape(), tc.shape()));
        }
        let mut data = Vec::with_capacity(b * n);
        for x in 0..b {
            let qr = tq.row(x);
            for i in 0..n {
                data.push(qr.iter().zip(tc.row(i)).map(|(u, v)| (u - v).abs()).sum());
            }
        }
        let out = Tensor::new(&[b, n], data)?;
        Ok(self.push(out, Op::L1DistAll(iq, ic), &[iq, ic]))
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let ids: Vec<usize> = parts.iter().map(|&p| self.idx(p)).collect::<Result<_>>()?;
        let first = ids.first().ok_or_else(|| Error::Domain {
            op: "concat_cols",
            detail: "no inputs".into(),
        })?;
        let (m, _) = self.nodes[*first].value.dims2()?;
        let mut widths = Vec::with_capacity(ids.len());
        for &i in &ids {
            let (r, c) = self.nodes[i].value.dims2()?;
            if r != m {
                return Err(Error::shape(
                    "concat_cols",
                    self.nodes[*first].value.shape(),
                    self.nodes[i].value.shape(),
                ));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for r in 0..m {
            for &i in &ids {
                data.extend_from_slice(self.nodes[i].value.row(r));
            }
        }
        let out = Tensor::new(&[m, total], data)?;
        Ok(self.push(out, Op::ConcatCols(ids.clone()), &ids))
    }

    /// Single-head graph attention aggregation.
    ///
    /// For node features `h: N×d` and attention vector `a = [a_src; a_dst]`
    /// of length `2d`, node `i` receives `Σ_j α_ij h_j` over its
    /// neighborhood, where `α_i· = softmax_j(LeakyReLU(a_src·h_i + a_dst·h_j))`.
    pub fn graph_attention(&mut self, h: Var, attn: Var, graph: &Arc<Neighborhoods>, slope: f64) -> Result<Var> {
        let (ih, ia) = (self.idx(h)?, self.idx(attn)?);
        let (th, ta) = (&self.nodes[ih].value, &self.nodes[ia].value);
        let (n, d) = th.dims2()?;
        if ta.len() != 2 * d {
            return Err(Error::shape("graph_attention", th.shape(), ta.shape()));
        }
        if graph.num_nodes() != n {
            return Err(Error::shape("graph_attention", th.shape(), &[graph.num_nodes()]));
        }
        let (a_src, a_dst) = ta.data().split_at(d);
        let dot = |v: &[f64], w: &[f64]| v.iter().zip(w).map(|(x, y)| x * y).sum::<f64>();
        let s_src: Vec<f64> = (0..n).map(|i| dot(th.row(i), a_src)).collect();
        let s_dst: Vec<f64> = (0..n).map(|i| dot(th.row(i), a_dst)).collect();
        let mut pre = vec![0.0; graph.num_edges()];
        let mut alpha = vec![0.0; graph.num_edges()];
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            let range = graph.range(i);
            let mut max = f64::NEG_INFINITY;
            for e in range.clone() {
                let z = s_src[i] + s_dst[graph.neighbors[e]];
                pre[e] = z;
                let act = if z > 0.0 { z } else { slope * z };
                alpha[e] = act;
                max = max.max(act);
            }
            let mut total = 0.0;
            for e in range.clone() {
                alpha[e] = (alpha[e] - max).exp();
                total += alpha[e];
            }
            let row = &mut out[i * d..(i + 1) * d];
            for e in range {
                alpha[e] /= total;
                let hj = th.row(graph.neighbors[e]);
                for (o, &v) in row.iter_mut().zip(hj) {
                    *o += alpha[e] * v;
                }
            }
        }
        let out = Tensor::new(&[n, d], out)?;
        let op = Op::GraphAttention {
            input: ih,
            attn: ia,
            graph: Arc::clone(graph),
            slope,
            alpha,
            pre,
        };
        Ok(self.push(out, op, &[ih, ia]))
    }

    /// Attention coefficients of a [`Tape::graph_attention`] node, edge-aligned
    /// with its [`Neighborhoods`].
    pub fn attention_weights(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes.get(v.id)?.op {
            Op::GraphAttention { alpha, .. } if v.tape == self.id => Some(alpha),
            _ => None,
        }
    }

    /// Re-arms the tape so [`Tape::backward`] may run again.
    pub fn reset(&mut self) {
        self.consumed = false;
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        let il = self.idx(loss)?;
        if self.consumed {
            return Err(Error::Tape("backward already ran; call reset() first".into()));
        }
        if self.nodes[il].value.len() != 1 {
            return Err(Error::Tape(format!(
                "loss must be scalar, got shape {:?}",
                self.nodes[il].value.shape()
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[il] = Some(vec![1.0]);

        for id in (0..=il).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].needs_grad {
                continue;
            }
            self.backprop(id, &g, &mut grads);
            grads[id] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| match (g, &node.op) {
                (Some(g), Op::Leaf) if node.needs_grad => Tensor::new(node.value.shape(), g).ok(),
                _ => None,
            })
            .collect();
        Ok(Gradients { tape: self.id, grads })
    }

    fn backprop(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let out = &nodes[id].value;
        let mut acc = |target: usize, contrib: Vec<f64>| {
            if !nodes[target].needs_grad {
                return;
            }
            match &mut grads[target] {
                Some(existing) => existing.iter_mut().zip(&contrib).for_each(|(e, c)| *e += c),
                slot @ None => *slot = Some(contrib),
            }
        };
        let unary = |i: usize, f: &dyn Fn(f64, f64, f64) -> f64| -> Vec<f64> {
            nodes[i]
                .value
                .data()
                .iter()
                .zip(out.data())
                .zip(g)
                .map(|((&x, &y), &gy)| f(x, y, gy))
                .collect()
        };

        match &nodes[id].op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (ta, tb) = (&nodes[a].value, &nodes[b].value);
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                if nodes[a].needs_grad {
                    acc(a, matmul_nt_raw(g, tb.data(), m, n, k));
                }
                if nodes[b].needs_grad {
                    acc(b, matmul_tn_raw(ta.data(), g, m, k, n));
                }
            }
            Op::FixedMatMul(lhs, b) => {
                let (m, k) = (lhs.shape()[0], lhs.shape()[1]);
                let n = nodes[*b].value.shape()[1];
                acc(*b, matmul_tn_raw(lhs.data(), g, m, k, n));
            }
            &Op::Transpose(a) => {
                let (r, c) = (out.shape()[0], out.shape()[1]);
                let mut ga = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        ga[j * r + i] = g[i * c + j];
                    }
                }
                acc(a, ga);
            }
            &Op::Reshape(a) => acc(a, g.to_vec()),
            &Op::Add(a, b) => {
                acc(a, reduce_to(g.to_vec(), nodes[a].value.len()));
                acc(b, reduce_to(g.to_vec(), nodes[b].value.len()));
            }
            &Op::Sub(a, b) => {
                acc(a, reduce_to(g.to_vec(), nodes[a].value.len()));
                acc(b, reduce_to(g.iter().map(|v| -v).collect(), nodes[b].value.len()));
            }
            &Op::Mul(a, b) => {
                let (ta, tb) = (&nodes[a].value, &nodes[b].value);
                let ga = broadcast_binary(tb, ta, |y, _| y);
                let gb = broadcast_binary(ta, tb, |x, _| x);
                let ga: Vec<f64> = ga.iter().zip(g).map(|(y, gv)| y * gv).collect();
                let gb: Vec<f64> = gb.iter().zip(g).map(|(x, gv)| x * gv).collect();
                acc(a, reduce_to(ga, ta.len()));
                acc(b, reduce_to(gb, tb.len()));
            }
            &Op::Neg(a) => acc(a, g.iter().map(|v| -v).collect()),
            &Op::Scale(a, c) => acc(a, g.iter().map(|v| v * c).collect()),
            &Op::AddScalar(a) => acc(a, g.to_vec()),
            &Op::Relu(a) => acc(a, unary(a, &|x, _, gy| if x > 0.0 { gy } else { 0.0 })),
            &Op::Sigmoid(a) => acc(a, unary(a, &|_, y, gy| gy * y * (1.0 - y))),
            &Op::Softplus(a) => acc(a, unary(a, &|x, _, gy| gy * sigmoid(x))),
            &Op::Log(a) => acc(a, unary(a, &|x, _, gy| gy / x)),
            &Op::Abs(a) => acc(a, unary(a, &|x, _, gy| gy * sign(x))),
            &Op::Elu(a) => acc(a, unary(a, &|x, y, gy| if x > 0.0 { gy } else { gy * (y + 1.0) })),
            &Op::AddRow(a, r) => {
                acc(a, g.to_vec());
                let n = nodes[r].value.len();
                let mut gr = vec![0.0; n];
                for row in g.chunks(n) {
                    gr.iter_mut().zip(row).for_each(|(s, v)| *s += v);
                }
                acc(r, gr);
            }
            &Op::Sum(a) => acc(a, vec![g[0]; nodes[a].value.len()]),
            &Op::Mean(a) => {
                let n = nodes[a].value.len();
                acc(a, vec![g[0] / n as f64; n]);
            }
            &Op::SumRows(a) => {
                let n = nodes[a].value.cols();
                acc(a, g.iter().flat_map(|&v| std::iter::repeat_n(v, n)).collect());
            }
            &Op::Select(a, i) => {
                let mut ga = vec![0.0; nodes[a].value.len()];
                ga[i] = g[0];
                acc(a, ga);
            }
            Op::GatherRows(a, idx) => {
                let ta = &nodes[*a].value;
                let c = ta.cols();
                let mut ga = vec![0.0; ta.len()];
                for (r, &i) in idx.iter().enumerate() {
                    let dst = &mut ga[i * c..(i + 1) * c];
                    dst.iter_mut().zip(&g[r * c..(r + 1) * c]).for_each(|(d, v)| *d += v);
                }
                acc(*a, ga);
            }
            &Op::OuterRows(a, c) => {
                let (ta, tc) = (&nodes[a].value, &nodes[c].value);
                let (m, p) = (ta.shape()[0], ta.shape()[1]);
                let q = tc.shape()[1];
                let mut ga = vec![0.0; m * p];
                let mut gc = vec![0.0; m * q];
                for b in 0..m {
                    let (ar, cr) = (ta.row(b), tc.row(b));
                    let gr = &g[b * p * q..(b + 1) * p * q];
                    for i in 0..p {
                        let gi = &gr[i * q..(i + 1) * q];
                        ga[b * p + i] = gi.iter().zip(cr).map(|(x, y)| x * y).sum();
                        for l in 0..q {
                            gc[b * q + l] += gi[l] * ar[i];
                        }
                    }
                }
                acc(a, ga);
                acc(c, gc);
            }
            Op::NormalizeRows(a, norms) => {
                let n = out.cols().max(1);
                let mut ga = vec![0.0; out.len()];
                for (r, &nr) in norms.iter().enumerate() {
                    let y = &out.data()[r * n..(r + 1) * n];
                    let gy = &g[r * n..(r + 1) * n];
                    let dst = &mut ga[r * n..(r + 1) * n];
                    if nr > NORM_EPS {
                        let proj: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                        for ((d, &yv), &gv) in dst.iter_mut().zip(y).zip(gy) {
                            *d = (gv - yv * proj) / nr;
                        }
                    } else {
                        for (d, &gv) in dst.iter_mut().zip(gy) {
                            *d = gv / NORM_EPS;
                        }
                    }
                }
                acc(*a, ga);
            }
            &Op::CosineRows(a, b) => {
                let (ta, tb) = (&nodes[a].value, &nodes[b].value);
                let (n, d) = (ta.shape()[0], ta.shape()[1]);
                let nb = tb.shape()[0];
                let na = row_norms(ta);
                let nbn = row_norms(tb);
                let mut ga = vec![0.0; ta.len()];
                let mut gb = vec![0.0; tb.len()];
                for i in 0..n {
                    let j = if nb == 1 { 0 } else { i };
                    let (u, v) = (ta.row(i), tb.row(j));
                    let (nu, nv) = (na[i], nbn[j]);
                    let (du, dv) = (nu.max(NORM_EPS), nv.max(NORM_EPS));
                    let c = out.data()[i];
                    let gi = g[i];
                    for k in 0..d {
                        // Below the guard the denominator is constant, so only the dot term varies.
                        let su = if nu > NORM_EPS { c * u[k] / (nu * nu) } else { 0.0 };
                        let sv = if nv > NORM_EPS { c * v[k] / (nv * nv) } else { 0.0 };
                        ga[i * d + k] += gi * (v[k] / (du * dv) - su);
                        gb[j * d + k] += gi * (u[k] / (du * dv) - sv);
                    }
                }
                acc(a, ga);
                acc(b, gb);
            }
            Op::BceWithLogits(a, targets) => {
                let ta = &nodes[*a].value;
                let scale = g[0] / ta.len() as f64;
                let ga = ta
                    .data()
                    .iter()
                    .zip(targets.iter())
                    .map(|(&x, &t)| scale * (sigmoid(x) - t))
                    .collect();
                acc(*a, ga);
            }
            &Op::L1DistAll(q, c) => {
                let (tq, tc) = (&nodes[q].value, &nodes[c].value);
                let (b, d) = (tq.shape()[0], tq.shape()[1]);
                let n = tc.shape()[0];
                let mut gq = vec![0.0; tq.len()];
                let mut gc = vec![0.0; tc.len()];
                for x in 0..b {
                    let qr = tq.row(x);
                    for i in 0..n {
                        let gv = g[x * n + i];
                        if gv == 0.0 {
                            continue;
                        }
                        let cr = tc.row(i);
                        for k in 0..d {
                            let s = gv * sign(qr[k] - cr[k]);
                            gq[x * d + k] += s;
                            gc[i * d + k] -= s;
                        }
                    }
                }
                acc(q, gq);
                acc(c, gc);
            }
            Op::ConcatCols(ids) => {
                let m = out.shape()[0];
                let total = out.shape()[1];
                let mut offset = 0;
                for &i in ids {
                    let w = nodes[i].value.cols();
                    let mut gi = Vec::with_capacity(m * w);
                    for r in 0..m {
                        gi.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                    }
                    acc(i, gi);
                    offset += w;
                }
            }
            Op::GraphAttention {
                input,
                attn,
                graph,
                slope,
                alpha,
                pre,
            } => {
                let (th, ta) = (&nodes[*input].value, &nodes[*attn].value);
                let (n, d) = (th.shape()[0], th.shape()[1]);
                let (a_src, a_dst) = ta.data().split_at(d);
                let mut gh = vec![0.0; th.len()];
                let mut ds_src = vec![0.0; n];
                let mut ds_dst = vec![0.0; n];
                for i in 0..n {
                    let gi = &g[i * d..(i + 1) * d];
                    let range = graph.range(i);
                    let dalpha: Vec<f64> = range
                        .clone()
                        .map(|e| {
                            let hj = th.row(graph.neighbors[e]);
                            gi.iter().zip(hj).map(|(x, y)| x * y).sum()
                        })
                        .collect();
                    let weighted: f64 = range.clone().zip(&dalpha).map(|(e, da)| alpha[e] * da).sum();
                    for (e, da) in range.zip(&dalpha) {
                        let j = graph.neighbors[e];
                        let dst = &mut gh[j * d..(j + 1) * d];
                        dst.iter_mut().zip(gi).for_each(|(x, v)| *x += alpha[e] * v);
                        let de = alpha[e] * (da - weighted);
                        let dz = if pre[e] > 0.0 { de } else { de * slope };
                        ds_src[i] += dz;
                        ds_dst[j] += dz;
                    }
                }
                let mut ga = vec![0.0; 2 * d];
                for i in 0..n {
                    let hi = th.row(i);
                    let dst = &mut gh[i * d..(i + 1) * d];
                    for k in 0..d {
                        dst[k] += ds_src[i] * a_src[k] + ds_dst[i] * a_dst[k];
                        ga[k] += ds_src[i] * hi[k];
                        ga[d + k] += ds_dst[i] * hi[k];
                    }
                }
                acc(*input, gh);
                acc(*attn, ga);
            }
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
