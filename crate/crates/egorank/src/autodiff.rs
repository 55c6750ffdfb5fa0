//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every operation as a node holding the op kind, the input
//! node ids and the saved output value. Insertion order is topological order,
//! so [`Tape::backward`] walks the nodes once in reverse and accumulates
//! vector-Jacobian products into per-node gradients.
//!
//! Elementwise binary ops broadcast over leading axes only: the smaller
//! operand's shape must equal the trailing dims of the larger one.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{sorted_sum, NodeId, Tensor};

#[derive(Clone, Debug)]
enum Op {
    Leaf { requires_grad: bool },
    Matmul { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Concat { inputs: Vec<NodeId> },
    Relu { x: NodeId },
    Tanh { x: NodeId },
    Sigmoid { x: NodeId },
    Log { x: NodeId },
    Exp { x: NodeId },
    Softmax { x: NodeId },
    SumAll { x: NodeId },
    MeanAll { x: NodeId },
    SliceCols { x: NodeId, start: usize, len: usize },
    Power { x: NodeId, exponent: f64 },
    AddScalar { x: NodeId },
    MulScalar { x: NodeId, c: f64 },
    Clamp { x: NodeId, lo: f64, hi: f64 },
    GatherRows { x: NodeId, ids: Arc<Vec<usize>> },
    SegmentSum { x: NodeId, segments: Arc<Vec<(usize, usize)>> },
}

struct Node<S> {
    op: Op,
    value: Tensor<S>,
}

/// Recording tape. One tape is live per training step; dropping it frees all
/// saved activations.
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
    needs_grad: Vec<bool>,
    debug_checks: bool,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), needs_grad: Vec::new(), debug_checks: false }
    }

    /// Enables per-op NaN/Inf detection (debug evaluation mode).
    pub fn with_debug_checks(mut self, on: bool) -> Self {
        self.debug_checks = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a value as a leaf node. Parameters use `requires_grad = true`;
    /// data enters either through this with `false` or implicitly when a
    /// detached tensor is passed to an op.
    pub fn leaf(&mut self, t: &Tensor<S>, requires_grad: bool) -> Tensor<S> {
        let id = self.nodes.len();
        let value = t.detached().with_node(id);
        self.nodes.push(Node { op: Op::Leaf { requires_grad }, value: value.clone() });
        self.needs_grad.push(requires_grad);
        value
    }

    pub fn constant(&mut self, t: &Tensor<S>) -> Tensor<S> {
        self.leaf(t, false)
    }

    fn intern(&mut self, t: &Tensor<S>) -> NodeId {
        match t.node() {
            Some(id) if id < self.nodes.len() => id,
            _ => self.leaf(t, false).node().unwrap(),
        }
    }

    fn push(&mut self, op: &'static str, kind: Op, value: Tensor<S>) -> Result<Tensor<S>> {
        if self.debug_checks && !value.all_finite() {
            return Err(Error::NonFinite { op });
        }
        let id = self.nodes.len();
        let needs = match &kind {
            Op::Leaf { requires_grad } => *requires_grad,
            Op::Matmul { a, b } | Op::Add { a, b } | Op::Sub { a, b } | Op::Mul { a, b } => {
                self.needs_grad[*a] || self.needs_grad[*b]
            }
            Op::Concat { inputs } => inputs.iter().any(|&i| self.needs_grad[i]),
            Op::Relu { x }
            | Op::Tanh { x }
            | Op::Sigmoid { x }
            | Op::Log { x }
            | Op::Exp { x }
            | Op::Softmax { x }
            | Op::SumAll { x }
            | Op::MeanAll { x }
            | Op::SliceCols { x, .. }
            | Op::Power { x, .. }
            | Op::AddScalar { x, .. }
            | Op::MulScalar { x, .. }
            | Op::Clamp { x, .. }
            | Op::GatherRows { x, .. }
            | Op::SegmentSum { x, .. } => self.needs_grad[*x],
        };
        let value = value.with_node(id);
        self.nodes.push(Node { op: kind, value: value.clone() });
        self.needs_grad.push(needs);
        Ok(value)
    }

    fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id].value
    }

    // ── elementwise binary with leading-axis broadcast ──────────────────

    fn broadcast_shapes(
        op: &'static str,
        sa: &[usize],
        sb: &[usize],
    ) -> Result<(Vec<usize>, bool, bool)> {
        // Returns (out_shape, a_tiles, b_tiles).
        if sa == sb {
            return Ok((sa.to_vec(), false, false));
        }
        if sa.len() > sb.len() && sa[sa.len() - sb.len()..] == *sb {
            return Ok((sa.to_vec(), false, true));
        }
        if sb.len() > sa.len() && sb[sb.len() - sa.len()..] == *sa {
            return Ok((sb.to_vec(), true, false));
        }
        Err(Error::Shape { op, detail: format!("lhs {sa:?} vs rhs {sb:?}") })
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: &Tensor<S>,
        b: &Tensor<S>,
        f: impl Fn(S, S) -> S,
        kind: impl Fn(NodeId, NodeId) -> Op,
    ) -> Result<Tensor<S>> {
        let (out_shape, _, _) = Self::broadcast_shapes(op, a.shape(), b.shape())?;
        let na = a.numel();
        let nb = b.numel();
        let n: usize = out_shape.iter().product();
        let mut out = Vec::with_capacity(n);
        let da = a.data();
        let db = b.data();
        if na == nb {
            for i in 0..n {
                out.push(f(da[i], db[i]));
            }
        } else if na > nb {
            for i in 0..n {
                out.push(f(da[i], db[i % nb]));
            }
        } else {
            for i in 0..n {
                out.push(f(da[i % na], db[i]));
            }
        }
        let ia = self.intern(a);
        let ib = self.intern(b);
        self.push(op, kind(ia, ib), Tensor::new(out_shape, out)?)
    }

    pub fn add(&mut self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        self.binary("add", a, b, |x, y| x + y, |a, b| Op::Add { a, b })
    }

    pub fn sub(&mut self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        self.binary("sub", a, b, |x, y| x - y, |a, b| Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        self.binary("multiply", a, b, |x, y| x * y, |a, b| Op::Mul { a, b })
    }

    // ── matmul ──────────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(Error::Shape {
                op: "matmul",
                detail: format!("lhs {:?} vs rhs {:?}", a.shape(), b.shape()),
            });
        }
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let n = b.shape()[1];
        let out = matmul_nn(a.data(), b.data(), m, k, n);
        let ia = self.intern(a);
        let ib = self.intern(b);
        self.push("matmul", Op::Matmul { a: ia, b: ib }, Tensor::matrix(m, n, out)?)
    }

    // ── structural ops ──────────────────────────────────────────────────

    /// Concatenation along the last axis.
    pub fn concat(&mut self, inputs: &[&Tensor<S>]) -> Result<Tensor<S>> {
        if inputs.is_empty() {
            return Err(Error::Shape { op: "concat", detail: "no inputs".into() });
        }
        let rows = inputs[0].rows();
        let lead = inputs[0].shape()[..inputs[0].shape().len() - 1].to_vec();
        let mut cols = 0;
        for t in inputs {
            if t.shape()[..t.shape().len() - 1] != lead[..] {
                return Err(Error::Shape {
                    op: "concat",
                    detail: format!("leading dims differ: {:?} vs {:?}", inputs[0].shape(), t.shape()),
                });
            }
            cols += t.cols();
        }
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for t in inputs {
                let c = t.cols();
                out.extend_from_slice(&t.data()[r * c..(r + 1) * c]);
            }
        }
        let ids: Vec<NodeId> = inputs.iter().map(|t| self.intern(t)).collect();
        let mut shape = lead;
        shape.push(cols);
        self.push("concat", Op::Concat { inputs: ids }, Tensor::new(shape, out)?)
    }

    /// Column range `[start, start+len)` of the last axis.
    pub fn slice_cols(&mut self, x: &Tensor<S>, start: usize, len: usize) -> Result<Tensor<S>> {
        let c = x.cols();
        if start + len > c || len == 0 {
            return Err(Error::Shape {
                op: "slice",
                detail: format!("range {}..{} of {:?}", start, start + len, x.shape()),
            });
        }
        let rows = x.rows();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&x.data()[r * c + start..r * c + start + len]);
        }
        let mut shape = x.shape()[..x.shape().len() - 1].to_vec();
        shape.push(len);
        let ix = self.intern(x);
        self.push("slice", Op::SliceCols { x: ix, start, len }, Tensor::new(shape, out)?)
    }

    /// Row lookup on a 2-D tensor: `out[r, :] = x[ids[r], :]`.
    pub fn gather_rows(&mut self, x: &Tensor<S>, ids: Arc<Vec<usize>>) -> Result<Tensor<S>> {
        if x.shape().len() != 2 {
            return Err(Error::Shape { op: "gather_rows", detail: format!("need 2-D, got {:?}", x.shape()) });
        }
        let (r, c) = (x.shape()[0], x.shape()[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= r) {
            return Err(Error::Shape { op: "gather_rows", detail: format!("row id {bad} out of {r}") });
        }
        let mut out = Vec::with_capacity(ids.len() * c);
        for &i in ids.iter() {
            out.extend_from_slice(&x.data()[i * c..(i + 1) * c]);
        }
        let ix = self.intern(x);
        let shape = vec![ids.len(), c];
        self.push("gather_rows", Op::GatherRows { x: ix, ids }, Tensor::new(shape, out)?)
    }

    /// Sums contiguous row ranges of a 2-D tensor, one output row per segment.
    /// Zero-length segments produce zero rows. Each range is reduced in value
    /// order, so the result is bit-exact under any permutation of the rows
    /// inside a segment.
    pub fn segment_sum(
        &mut self,
        x: &Tensor<S>,
        segments: Arc<Vec<(usize, usize)>>,
    ) -> Result<Tensor<S>> {
        if x.shape().len() != 2 {
            return Err(Error::Shape { op: "segment_sum", detail: format!("need 2-D, got {:?}", x.shape()) });
        }
        let (r, c) = (x.shape()[0], x.shape()[1]);
        for &(start, len) in segments.iter() {
            if start + len > r {
                return Err(Error::Shape {
                    op: "segment_sum",
                    detail: format!("segment {}..{} of {} rows", start, start + len, r),
                });
            }
        }
        let mut out = vec![S::zero(); segments.len() * c];
        let mut scratch: Vec<S> = Vec::new();
        for (s, &(start, len)) in segments.iter().enumerate() {
            if len == 0 {
                continue;
            }
            for j in 0..c {
                scratch.clear();
                scratch.extend((start..start + len).map(|row| x.data()[row * c + j]));
                out[s * c + j] = sorted_sum(&mut scratch);
            }
        }
        let ix = self.intern(x);
        let shape = vec![segments.len(), c];
        self.push("segment_sum", Op::SegmentSum { x: ix, segments }, Tensor::new(shape, out)?)
    }

    // ── unary ops ───────────────────────────────────────────────────────

    fn unary(
        &mut self,
        op: &'static str,
        x: &Tensor<S>,
        f: impl Fn(S) -> S,
        kind: impl Fn(NodeId) -> Op,
    ) -> Result<Tensor<S>> {
        let out: Vec<S> = x.data().iter().map(|&v| f(v)).collect();
        let ix = self.intern(x);
        self.push(op, kind(ix), Tensor::new(x.shape().to_vec(), out)?)
    }

    pub fn relu(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.unary("relu", x, |v| if v > S::zero() { v } else { S::zero() }, |x| Op::Relu { x })
    }

    pub fn tanh(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.unary("tanh", x, |v| v.tanh(), |x| Op::Tanh { x })
    }

    pub fn sigmoid(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.unary("sigmoid", x, sigmoid_scalar, |x| Op::Sigmoid { x })
    }

    pub fn log(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.unary("log", x, |v| v.ln(), |x| Op::Log { x })
    }

    pub fn exp(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.unary("exp", x, |v| v.exp(), |x| Op::Exp { x })
    }

    pub fn power(&mut self, x: &Tensor<S>, exponent: f64) -> Result<Tensor<S>> {
        let e = S::of_f64(exponent);
        self.unary("power", x, |v| v.powf(e), |x| Op::Power { x, exponent })
    }

    pub fn add_scalar(&mut self, x: &Tensor<S>, c: f64) -> Result<Tensor<S>> {
        let cs = S::of_f64(c);
        self.unary("add_scalar", x, |v| v + cs, |x| Op::AddScalar { x })
    }

    pub fn mul_scalar(&mut self, x: &Tensor<S>, c: f64) -> Result<Tensor<S>> {
        let cs = S::of_f64(c);
        self.unary("mul_scalar", x, |v| v * cs, |x| Op::MulScalar { x, c })
    }

    pub fn clamp(&mut self, x: &Tensor<S>, lo: f64, hi: f64) -> Result<Tensor<S>> {
        let (l, h) = (S::of_f64(lo), S::of_f64(hi));
        self.unary(
            "clamp",
            x,
            |v| if v < l { l } else if v > h { h } else { v },
            |x| Op::Clamp { x, lo, hi },
        )
    }

    /// Softmax over the last axis, computed with max-subtraction.
    pub fn softmax(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let rows = x.rows();
        let c = x.cols();
        let mut out = vec![S::zero(); rows * c];
        for r in 0..rows {
            let row = &x.data()[r * c..(r + 1) * c];
            let mut mx = row[0];
            for &v in row {
                if v > mx {
                    mx = v;
                }
            }
            let mut denom = S::zero();
            for j in 0..c {
                let e = (row[j] - mx).exp();
                out[r * c + j] = e;
                denom += e;
            }
            for j in 0..c {
                out[r * c + j] = out[r * c + j] / denom;
            }
        }
        let ix = self.intern(x);
        self.push("softmax", Op::Softmax { x: ix }, Tensor::new(x.shape().to_vec(), out)?)
    }

    pub fn sum(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let mut acc = S::zero();
        for &v in x.data() {
            acc += v;
        }
        let ix = self.intern(x);
        self.push("sum", Op::SumAll { x: ix }, Tensor::scalar(acc))
    }

    pub fn mean(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let mut acc = S::zero();
        for &v in x.data() {
            acc += v;
        }
        let n = S::of_f64(x.numel() as f64);
        let ix = self.intern(x);
        self.push("mean", Op::MeanAll { x: ix }, Tensor::scalar(acc / n))
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Gradient of a scalar loss with respect to every node that needs one.
    /// Leaves registered with `requires_grad` that the loss never reached get
    /// zero gradients.
    pub fn backward(&self, loss: &Tensor<S>) -> Result<Gradients<S>> {
        let loss_id = loss.node().ok_or(Error::Detached)?;
        if loss_id >= self.nodes.len() {
            return Err(Error::Detached);
        }
        if self.value(loss_id).numel() != 1 {
            return Err(Error::NonScalarLoss(self.value(loss_id).shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<S>>> = vec![None; self.nodes.len()];
        grads[loss_id] = Some(vec![S::one()]);

        for id in (0..=loss_id).rev() {
            if !self.needs_grad[id] {
                grads[id] = None;
                continue;
            }
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[id].op {
                Op::Leaf { .. } => {
                    grads[id] = Some(g);
                }
                Op::Matmul { a, b } => {
                    let (m, k) = (self.value(*a).shape()[0], self.value(*a).shape()[1]);
                    let n = self.value(*b).shape()[1];
                    if self.needs_grad[*a] {
                        let da = matmul_nt(&g, self.value(*b).data(), m, n, k);
                        accumulate(&mut grads[*a], da);
                    }
                    if self.needs_grad[*b] {
                        let db = matmul_tn(self.value(*a).data(), &g, m, k, n);
                        accumulate(&mut grads[*b], db);
                    }
                }
                Op::Add { a, b } => {
                    if self.needs_grad[*a] {
                        accumulate(&mut grads[*a], reduce_to(&g, self.value(*a).numel(), false));
                    }
                    if self.needs_grad[*b] {
                        accumulate(&mut grads[*b], reduce_to(&g, self.value(*b).numel(), false));
                    }
                }
                Op::Sub { a, b } => {
                    if self.needs_grad[*a] {
                        accumulate(&mut grads[*a], reduce_to(&g, self.value(*a).numel(), false));
                    }
                    if self.needs_grad[*b] {
                        accumulate(&mut grads[*b], reduce_to(&g, self.value(*b).numel(), true));
                    }
                }
                Op::Mul { a, b } => {
                    let va = self.value(*a);
                    let vb = self.value(*b);
                    if self.needs_grad[*a] {
                        let prod = tiled_product(&g, vb.data());
                        accumulate(&mut grads[*a], reduce_to(&prod, va.numel(), false));
                    }
                    if self.needs_grad[*b] {
                        let prod = tiled_product(&g, va.data());
                        accumulate(&mut grads[*b], reduce_to(&prod, vb.numel(), false));
                    }
                }
                Op::Concat { inputs } => {
                    let rows = self.value(id).rows();
                    let total_cols = self.value(id).cols();
                    let mut offset = 0;
                    for &inp in inputs {
                        let c = self.value(inp).cols();
                        if self.needs_grad[inp] {
                            let mut gi = vec![S::zero(); rows * c];
                            for r in 0..rows {
                                gi[r * c..(r + 1) * c]
                                    .copy_from_slice(&g[r * total_cols + offset..r * total_cols + offset + c]);
                            }
                            accumulate(&mut grads[inp], gi);
                        }
                        offset += c;
                    }
                }
                Op::Relu { x } => {
                    let vx = self.value(*x);
                    let gi: Vec<S> = vx
                        .data()
                        .iter()
                        .zip(&g)
                        .map(|(&v, &gg)| if v > S::zero() { gg } else { S::zero() })
                        .collect();
                    accumulate(&mut grads[*x], gi);
                }
                Op::Tanh { x } => {
                    let y = self.value(id);
                    let gi: Vec<S> = y.data().iter().zip(&g).map(|(&y, &gg)| gg * (S::one() - y * y)).collect();
                    accumulate(&mut grads[*x], gi);
                }
                Op::Sigmoid { x } => {
                    let y = self.value(id);
                    let gi: Vec<S> = y.data().iter().zip(&g).map(|(&y, &gg)| gg * y * (S::one() - y)).collect();
                    accumulate(&mut grads[*x], gi);
                }
                Op::Log { x } => {
                    let vx = self.value(*x);
                    let gi: Vec<S> = vx.data().iter().zip(&g).map(|(&v, &gg)| gg / v).collect();
                    accumulate(&mut grads[*x], gi);
                }
                Op::Exp { x } => {
                    let y = self.value(id);
                    let gi: Vec<S> = y.data().iter().zip(&g).map(|(&y, &gg)| gg * y).collect();
                    accumulate(&mut grads[*x], gi);
                }
                Op::Softmax { x } => {
                    let y = self.value(id);
                    let rows = y.rows();
                    let c = y.cols();
                    let mut gi = vec![S::zero(); rows * c];
                    for r in 0..rows {
                        let yr = &y.data()[r * c..(r + 1) * c];
                        let gr = &g[r * c..(r + 1) * c];
                        let mut dot = S::zero();
                        for j in 0..c {
                            dot += yr[j] * gr[j];
                        }
                        for j in 0..c {
                            gi[r * c + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    accumulate(&mut grads[*x], gi);
                }
                Op::SumAll { x } => {
                    let n = self.value(*x).numel();
                    accumulate(&mut grads[*x], vec![g[0]; n]);
                }
                Op::MeanAll { x } => {
                    let n = self.value(*x).numel();
                    let s = g[0] / S::of_f64(n as f64);
                    accumulate(&mut grads[*x], vec![s; n]);
                }
                Op::SliceCols { x, start, len } => {
                    let vx = self.value(*x);
                    let rows = vx.rows();
                    let c = vx.cols();
                    let mut gi = vec![S::zero(); rows * c];
                    for r in 0..rows {
                        gi[r * c + start..r * c + start + len].copy_from_slice(&g[r * len..(r + 1) * len]);
                    }
                    accumulate(&mut grads[*x], gi);
                }
                Op::Power { x, exponent } => {
                    let vx = self.value(*x);
                    let e = S::of_f64(*exponent);
                    let em1 = S::of_f64(*exponent - 1.0);
                    let gi: Vec<S> = vx.data().iter().zip(&g).map(|(&v, &gg)| gg * e * v.powf(em1)).collect();
                    accumulate(&mut grads[*x], gi);
                }
                Op::AddScalar { x, .. } => {
                    accumulate(&mut grads[*x], g.clone());
                }
                Op::MulScalar { x, c } => {
                    let cs = S::of_f64(*c);
                    let gi: Vec<S> = g.iter().map(|&gg| gg * cs).collect();
                    accumulate(&mut grads[*x], gi);
                }
                Op::Clamp { x, lo, hi } => {
                    let vx = self.value(*x);
                    let (l, h) = (S::of_f64(*lo), S::of_f64(*hi));
                    let gi: Vec<S> = vx
                        .data()
                        .iter()
                        .zip(&g)
                        .map(|(&v, &gg)| if v > l && v < h { gg } else { S::zero() })
                        .collect();
                    accumulate(&mut grads[*x], gi);
                }
                Op::GatherRows { x, ids } => {
                    let vx = self.value(*x);
                    let c = vx.cols();
                    let mut gi = vec![S::zero(); vx.numel()];
                    for (r, &src) in ids.iter().enumerate() {
                        for j in 0..c {
                            gi[src * c + j] += g[r * c + j];
                        }
                    }
                    accumulate(&mut grads[*x], gi);
                }
                Op::SegmentSum { x, segments } => {
                    let vx = self.value(*x);
                    let c = vx.cols();
                    let mut gi = vec![S::zero(); vx.numel()];
                    for (s, &(start, len)) in segments.iter().enumerate() {
                        for row in start..start + len {
                            for j in 0..c {
                                gi[row * c + j] += g[s * c + j];
                            }
                        }
                    }
                    accumulate(&mut grads[*x], gi);
                }
            }
            if !matches!(self.nodes[id].op, Op::Leaf { .. }) {
                grads[id] = None;
            }
        }

        let mut out: Vec<Option<Tensor<S>>> = vec![None; self.nodes.len()];
        for (id, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { requires_grad: true } = node.op {
                let shape = node.value.shape().to_vec();
                let t = match grads[id].take() {
                    Some(g) => Tensor::new(shape, g)?,
                    None => Tensor::zeros(shape),
                };
                out[id] = Some(t);
            }
        }
        Ok(Gradients { grads: out })
    }
}

fn sigmoid_scalar<S: Scalar>(v: S) -> S {
    // Evaluated in the direction that avoids exp overflow.
    if v >= S::zero() {
        S::one() / (S::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (S::one() + e)
    }
}

fn accumulate<S: Scalar>(slot: &mut Option<Vec<S>>, g: Vec<S>) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

/// Reduces a broadcast gradient back to `target_numel` elements by summing
/// over the leading tile axis. `negate` flips the sign (for `sub` rhs).
fn reduce_to<S: Scalar>(g: &[S], target_numel: usize, negate: bool) -> Vec<S> {
    let mut out = vec![S::zero(); target_numel];
    for (i, &v) in g.iter().enumerate() {
        out[i % target_numel] += v;
    }
    if negate {
        for v in &mut out {
            *v = -*v;
        }
    }
    out
}

/// Elementwise product where the shorter operand tiles over leading axes.
fn tiled_product<S: Scalar>(g: &[S], other: &[S]) -> Vec<S> {
    let n = other.len();
    g.iter().enumerate().map(|(i, &v)| v * other[i % n]).collect()
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn by_node(&self, id: NodeId) -> Option<&Tensor<S>> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }

    pub fn wrt(&self, t: &Tensor<S>) -> Option<&Tensor<S>> {
        t.node().and_then(|id| self.by_node(id))
    }
}

// ── matmul kernels ──────────────────────────────────────────────────────

/// C[m,n] = A[m,k] B[k,n]
pub fn matmul_nn<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut c = vec![S::zero(); m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == S::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
    c
}

/// C[m,k] = G[m,n] B[k,n]^T
fn matmul_nt<S: Scalar>(g: &[S], b: &[S], m: usize, n: usize, k: usize) -> Vec<S> {
    let mut c = vec![S::zero(); m * k];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for j in 0..k {
            let brow = &b[j * n..(j + 1) * n];
            let mut acc = S::zero();
            for p in 0..n {
                acc += grow[p] * brow[p];
            }
            c[i * k + j] = acc;
        }
    }
    c
}

/// C[k,n] = A[m,k]^T G[m,n]
fn matmul_tn<S: Scalar>(a: &[S], g: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut c = vec![S::zero(); k * n];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == S::zero() {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += av * grow[j];
            }
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    type T = Tensor<f64>;

    #[test]
    fn sigmoid_at_zero_is_half() {
        let mut tape = Tape::new();
        let x = T::scalar(0.0);
        let y = tape.sigmoid(&x).unwrap();
        assert_eq!(y.data(), &[0.5]);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut tape = Tape::new();
        let x = T::vector(vec![0.0, 0.0]).unwrap();
        let y = tape.softmax(&x).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = Tape::new();
        let x = T::matrix(3, 4, (0..12).map(|i| (i as f64) * 0.7 - 3.0).collect()).unwrap();
        let y = tape.softmax(&x).unwrap();
        for r in 0..3 {
            let s: f64 = y.data()[r * 4..(r + 1) * 4].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_identity_returns_input() {
        let mut tape = Tape::new();
        let eye = T::matrix(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let a = T::matrix(3, 3, (0..9).map(|i| i as f64 * 1.3 - 2.0).collect()).unwrap();
        let y = tape.matmul(&eye, &a).unwrap();
        assert_eq!(y.data(), a.data());
    }

    #[test]
    fn matmul_shape_mismatch_names_op_and_shapes() {
        let mut tape = Tape::<f64>::new();
        let a = T::matrix(2, 3, vec![0.0; 6]).unwrap();
        let b = T::matrix(2, 3, vec![0.0; 6]).unwrap();
        let err = tape.matmul(&a, &b).unwrap_err().to_string();
        assert!(err.contains("matmul"), "{err}");
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn sigmoid_gradient_at_zero_is_quarter() {
        let mut tape = Tape::new();
        let x = tape.leaf(&T::scalar(0.0), true);
        let y = tape.sigmoid(&x).unwrap();
        let loss = tape.sum(&y).unwrap();
        let grads = tape.backward(&loss).unwrap();
        let g = grads.wrt(&x).unwrap().data()[0];
        assert!((g - 0.25).abs() < 1e-12);
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let used = tape.leaf(&T::scalar(2.0), true);
        let unused = tape.leaf(&T::matrix(2, 2, vec![1.0; 4]).unwrap(), true);
        let y = tape.mul(&used, &used).unwrap();
        let loss = tape.sum(&y).unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.wrt(&unused).unwrap().data(), &[0.0; 4]);
        assert_eq!(grads.wrt(&used).unwrap().data(), &[4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.leaf(&T::vector(vec![1.0, 2.0]).unwrap(), true);
        let y = tape.relu(&x).unwrap();
        assert!(matches!(tape.backward(&y), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn debug_checks_flag_catches_non_finite() {
        let mut tape = Tape::new().with_debug_checks(true);
        let x = T::scalar(0.0);
        assert!(matches!(tape.log(&x), Err(Error::NonFinite { op: "log" })));
    }

    #[test]
    fn segment_sum_handles_empty_segments() {
        let mut tape = Tape::new();
        let x = T::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let segs = Arc::new(vec![(0usize, 2usize), (2, 0), (2, 1)]);
        let y = tape.segment_sum(&x, segs).unwrap();
        assert_eq!(y.data(), &[4.0, 6.0, 0.0, 0.0, 5.0, 6.0]);
    }

    #[test]
    fn gather_rows_backward_scatter_adds() {
        let mut tape = Tape::new();
        let x = tape.leaf(&T::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap(), true);
        let y = tape.gather_rows(&x, Arc::new(vec![0, 0, 1])).unwrap();
        let loss = tape.sum(&y).unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.wrt(&x).unwrap().data(), &[2.0, 2.0, 1.0, 1.0]);
    }

    #[test]
    fn broadcast_add_reduces_gradient_over_rows() {
        let mut tape = Tape::new();
        let x = T::matrix(3, 2, vec![0.0; 6]).unwrap();
        let b = tape.leaf(&T::vector(vec![1.0, 2.0]).unwrap(), true);
        let y = tape.add(&x, &b).unwrap();
        assert_eq!(y.shape(), &[3, 2]);
        let loss = tape.sum(&y).unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.wrt(&b).unwrap().data(), &[3.0, 3.0]);
    }
}
