//! Reverse-mode automatic differentiation over a recorded tape.
//!
//! Operations execute eagerly and push a node describing how to propagate
//! gradients. [`Tape::backward`] walks the nodes in reverse, accumulating
//! exact gradients for every node, including leaves. Ops are tensor-granular,
//! so a full network forward is a few dozen nodes rather than millions.
//!
//! The op set is exactly what the attention network needs: dense matmul,
//! activations, per-segment softmax over edge logits, the two fused
//! gather/scatter ops used by message passing, head concatenation/averaging,
//! and a masked cross-entropy loss.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{matmul_nt, matmul_tn, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    MatMul { a: usize, b: usize },
    Add { a: usize, b: usize },
    /// Broadcasts a `1 x d` bias over every row of an `n x d` input.
    AddBias { x: usize, bias: usize },
    Scale { x: usize, factor: f64 },
    /// Multiply by a 1x1 scalar node.
    ScaleByNode { x: usize, scalar: usize },
    MulElem { a: usize, b: usize },
    Sum { x: usize },
    /// Column slice `x[:, from..to]`.
    SliceCols { x: usize, from: usize, to: usize },
    LeakyRelu { x: usize, slope: f64 },
    Elu { x: usize },
    SegmentSoftmax { logits: usize, segments: Arc<Vec<usize>> },
    /// `out[e] = s[tgt[e]] + t[src[e]] + edge_term[e]` over directed edges.
    EdgeLogits {
        per_target: usize,
        per_source: usize,
        edge_term: usize,
        src: Arc<Vec<usize>>,
        tgt: Arc<Vec<usize>>,
    },
    /// `out[tgt[e], :] += alpha[e] * feats[src[e], :]` over directed edges.
    AttnAggregate {
        feats: usize,
        alpha: usize,
        src: Arc<Vec<usize>>,
        tgt: Arc<Vec<usize>>,
    },
    ConcatCols { parts: Vec<usize> },
    MeanParts { parts: Vec<usize> },
    CrossEntropy {
        logits: usize,
        labels: Arc<Vec<usize>>,
        mask: Arc<Vec<bool>>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    /// Whether any tracked leaf feeds this node; untracked subgraphs are
    /// skipped during backward.
    tracked: bool,
}

/// Recorded computation with eager forward values.
///
/// One tape per forward/backward pass; create a fresh tape for each training
/// request. Tapes are single-threaded but `Send`, so independent passes can
/// run on worker threads.
pub struct Tape {
    nodes: Vec<Node>,
    /// Per-node gradient buffers after backward; `None` where no gradient
    /// flowed (untouched or untracked nodes are implicitly zero).
    grads: Option<Vec<Option<Tensor>>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), grads: None }
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        let tracked = match &op {
            Op::Leaf => true,
            Op::MatMul { a, b }
            | Op::Add { a, b }
            | Op::AddBias { x: a, bias: b }
            | Op::ScaleByNode { x: a, scalar: b }
            | Op::MulElem { a, b } => self.nodes[*a].tracked || self.nodes[*b].tracked,
            Op::Scale { x, .. }
            | Op::Sum { x }
            | Op::SliceCols { x, .. }
            | Op::LeakyRelu { x, .. }
            | Op::Elu { x }
            | Op::SegmentSoftmax { logits: x, .. }
            | Op::CrossEntropy { logits: x, .. } => self.nodes[*x].tracked,
            Op::EdgeLogits { per_target, per_source, edge_term, .. } => {
                self.nodes[*per_target].tracked
                    || self.nodes[*per_source].tracked
                    || self.nodes[*edge_term].tracked
            }
            Op::AttnAggregate { feats, alpha, .. } => {
                self.nodes[*feats].tracked || self.nodes[*alpha].tracked
            }
            Op::ConcatCols { parts } | Op::MeanParts { parts } => {
                parts.iter().any(|&p| self.nodes[p].tracked)
            }
        };
        self.nodes.push(Node { value, op, tracked });
        NodeId(self.nodes.len() - 1)
    }

    /// Inserts an input tensor (parameter or data) as a differentiable leaf.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Inserts fixed input data: no gradient is computed for it or for any
    /// purely-constant subgraph hanging off it.
    pub fn leaf_const(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node { value, op: Op::Leaf, tracked: false });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let t = self.value(id);
        debug_assert_eq!(t.shape(), (1, 1));
        t.data()[0]
    }

    /// Gradient of the most recent [`Tape::backward`] target w.r.t. `id`
    /// (zeros where no gradient flowed).
    ///
    /// Panics if backward has not been run.
    pub fn grad(&self, id: NodeId) -> Tensor {
        let slot = &self.grads.as_ref().expect("backward() has not been run")[id.0];
        match slot {
            Some(g) => g.clone(),
            None => {
                let v = self.value(id);
                Tensor::zeros(v.rows(), v.cols())
            }
        }
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul { a: a.0, b: b.0 }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape("add", ta.shape(), tb.shape()));
        }
        let mut out = ta.clone();
        out.add_assign(tb);
        Ok(self.push(out, Op::Add { a: a.0, b: b.0 }))
    }

    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tb.rows() != 1 || tb.cols() != tx.cols() {
            return Err(Error::shape("add_bias", tx.shape(), tb.shape()));
        }
        let cols = tx.cols();
        let mut out = tx.clone();
        {
            let bd = tb.data().to_vec();
            for row in out.data_mut().chunks_mut(cols) {
                for (o, b) in row.iter_mut().zip(&bd) {
                    *o += *b;
                }
            }
        }
        Ok(self.push(out, Op::AddBias { x: x.0, bias: bias.0 }))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let mut out = self.value(x).clone();
        out.scale_in_place(factor);
        self.push(out, Op::Scale { x: x.0, factor })
    }

    pub fn mul_elem(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape("mul_elem", ta.shape(), tb.shape()));
        }
        let mut out = ta.clone();
        for (o, &bv) in out.data_mut().iter_mut().zip(tb.data()) {
            *o *= bv;
        }
        Ok(self.push(out, Op::MulElem { a: a.0, b: b.0 }))
    }

    /// Sum of all entries, as a `1 x 1` node.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total: f64 = self.value(x).data().iter().sum();
        let out = Tensor::from_vec(1, 1, vec![total]).unwrap();
        self.push(out, Op::Sum { x: x.0 })
    }

    /// Multiplies every entry of `x` by a `1 x 1` scalar node.
    pub fn scale_by(&mut self, x: NodeId, scalar: NodeId) -> Result<NodeId> {
        let s = self.value(scalar);
        if s.shape() != (1, 1) {
            return Err(Error::shape("scale_by", self.value(x).shape(), s.shape()));
        }
        let factor = s.data()[0];
        let mut out = self.value(x).clone();
        out.scale_in_place(factor);
        Ok(self.push(out, Op::ScaleByNode { x: x.0, scalar: scalar.0 }))
    }

    /// Column slice `x[:, from..to]`.
    pub fn slice_cols(&mut self, x: NodeId, from: usize, to: usize) -> Result<NodeId> {
        let t = self.value(x);
        let (rows, cols) = t.shape();
        if from >= to || to > cols {
            return Err(Error::contract(format!("slice_cols {from}..{to} of {cols} columns")));
        }
        let width = to - from;
        let mut out = Tensor::zeros(rows, width);
        for r in 0..rows {
            out.data_mut()[r * width..(r + 1) * width]
                .copy_from_slice(&t.row(r)[from..to]);
        }
        Ok(self.push(out, Op::SliceCols { x: x.0, from, to }))
    }

    /// Leaky ReLU with the given negative-side slope in `(0, 1)`.
    /// The subgradient at exactly zero is taken as 1.
    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> Result<NodeId> {
        if !(0.0 < slope && slope < 1.0) {
            return Err(Error::contract(format!("leaky_relu slope {slope} outside (0, 1)")));
        }
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            if *v < 0.0 {
                *v *= slope;
            }
        }
        Ok(self.push(out, Op::LeakyRelu { x: x.0, slope }))
    }

    /// ELU: identity for non-negative inputs, `exp(x) - 1` below zero.
    pub fn elu(&mut self, x: NodeId) -> NodeId {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            if *v < 0.0 {
                *v = v.exp() - 1.0;
            }
        }
        self.push(out, Op::Elu { x: x.0 })
    }

    /// Softmax normalized independently within each segment.
    ///
    /// `logits` must be an `e x 1` column; `segments[i]` assigns entry `i` to
    /// a segment in `[0, n_segments)`. Stabilized by per-segment max
    /// subtraction. Errors on an empty entry set.
    pub fn segment_softmax(
        &mut self,
        logits: NodeId,
        segments: Arc<Vec<usize>>,
        n_segments: usize,
    ) -> Result<NodeId> {
        let t = self.value(logits);
        if t.is_empty() {
            return Err(Error::contract("segment_softmax on an empty segment set"));
        }
        if t.cols() != 1 || t.rows() != segments.len() {
            return Err(Error::shape("segment_softmax", t.shape(), (segments.len(), 1)));
        }
        if let Some(&bad) = segments.iter().find(|&&s| s >= n_segments) {
            return Err(Error::contract(format!(
                "segment id {bad} out of range 0..{n_segments}"
            )));
        }
        let vals = t.data();
        let mut seg_max = vec![f64::NEG_INFINITY; n_segments];
        for (&v, &s) in vals.iter().zip(segments.iter()) {
            if v > seg_max[s] {
                seg_max[s] = v;
            }
        }
        let mut out = vec![0.0; vals.len()];
        let mut seg_sum = vec![0.0; n_segments];
        for (i, (&v, &s)) in vals.iter().zip(segments.iter()).enumerate() {
            let e = (v - seg_max[s]).exp();
            out[i] = e;
            seg_sum[s] += e;
        }
        for (o, &s) in out.iter_mut().zip(segments.iter()) {
            *o /= seg_sum[s];
        }
        let out = Tensor::from_vec(vals.len(), 1, out).unwrap();
        Ok(self.push(out, Op::SegmentSoftmax { logits: logits.0, segments }))
    }

    /// Per-edge attention logit assembly: `out[e] = s[tgt[e]] + t[src[e]] + edge_term[e]`.
    ///
    /// `per_target`/`per_source` are `n x 1` per-node scores, `edge_term` the
    /// `e x 1` edge-attribute contribution.
    pub fn edge_logits(
        &mut self,
        per_target: NodeId,
        per_source: NodeId,
        edge_term: NodeId,
        src: Arc<Vec<usize>>,
        tgt: Arc<Vec<usize>>,
    ) -> Result<NodeId> {
        let (s, t, e) = (self.value(per_target), self.value(per_source), self.value(edge_term));
        let n = s.rows();
        let n_edges = src.len();
        if s.cols() != 1 || t.cols() != 1 || t.rows() != n {
            return Err(Error::shape("edge_logits", s.shape(), t.shape()));
        }
        if e.cols() != 1 || e.rows() != n_edges || tgt.len() != n_edges {
            return Err(Error::shape("edge_logits", e.shape(), (n_edges, 1)));
        }
        if src.iter().chain(tgt.iter()).any(|&i| i >= n) {
            return Err(Error::contract("edge endpoint out of node range"));
        }
        let mut out = vec![0.0; n_edges];
        let (sd, td, ed) = (s.data(), t.data(), e.data());
        for i in 0..n_edges {
            out[i] = sd[tgt[i]] + td[src[i]] + ed[i];
        }
        let out = Tensor::from_vec(n_edges, 1, out).unwrap();
        Ok(self.push(
            out,
            Op::EdgeLogits {
                per_target: per_target.0,
                per_source: per_source.0,
                edge_term: edge_term.0,
                src,
                tgt,
            },
        ))
    }

    /// Attention-weighted neighborhood sum:
    /// `out[i, :] = sum over edges e with tgt[e] = i of alpha[e] * feats[src[e], :]`.
    pub fn attn_aggregate(
        &mut self,
        feats: NodeId,
        alpha: NodeId,
        src: Arc<Vec<usize>>,
        tgt: Arc<Vec<usize>>,
    ) -> Result<NodeId> {
        let (f, a) = (self.value(feats), self.value(alpha));
        let (n, d) = f.shape();
        let n_edges = src.len();
        if a.cols() != 1 || a.rows() != n_edges || tgt.len() != n_edges {
            return Err(Error::shape("attn_aggregate", a.shape(), (n_edges, 1)));
        }
        if src.iter().chain(tgt.iter()).any(|&i| i >= n) {
            return Err(Error::contract("edge endpoint out of node range"));
        }
        let mut out = Tensor::zeros(n, d);
        {
            let od = out.data_mut();
            let ad = a.data();
            for e in 0..n_edges {
                let w = ad[e];
                let frow = f.row(src[e]);
                let orow = &mut od[tgt[e] * d..(tgt[e] + 1) * d];
                for (o, &x) in orow.iter_mut().zip(frow) {
                    *o += w * x;
                }
            }
        }
        Ok(self.push(out, Op::AttnAggregate { feats: feats.0, alpha: alpha.0, src, tgt }))
    }

    /// Column-wise concatenation of same-height parts.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::contract("concat_cols of zero parts"));
        }
        let rows = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(Error::shape("concat_cols", (rows, 0), t.shape()));
            }
            cols += t.cols();
        }
        let mut out = Tensor::zeros(rows, cols);
        {
            let od = out.data_mut();
            let mut offset = 0;
            for &p in parts {
                let t = &self.nodes[p.0].value;
                let pc = t.cols();
                for r in 0..rows {
                    od[r * cols + offset..r * cols + offset + pc].copy_from_slice(t.row(r));
                }
                offset += pc;
            }
        }
        Ok(self.push(out, Op::ConcatCols { parts: parts.iter().map(|p| p.0).collect() }))
    }

    /// Arithmetic mean of same-shaped parts.
    pub fn mean_parts(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::contract("mean_parts of zero parts"));
        }
        let shape = self.value(parts[0]).shape();
        let mut out = Tensor::zeros(shape.0, shape.1);
        for &p in parts {
            let t = self.value(p);
            if t.shape() != shape {
                return Err(Error::shape("mean_parts", shape, t.shape()));
            }
            out.add_assign(t);
        }
        out.scale_in_place(1.0 / parts.len() as f64);
        Ok(self.push(out, Op::MeanParts { parts: parts.iter().map(|p| p.0).collect() }))
    }

    /// Mean masked cross-entropy over rows of an `n x c` logit matrix.
    ///
    /// Unmasked rows contribute neither loss nor gradient. Errors if the mask
    /// selects nothing or a masked label is out of range.
    pub fn cross_entropy(
        &mut self,
        logits: NodeId,
        labels: Arc<Vec<usize>>,
        mask: Arc<Vec<bool>>,
    ) -> Result<NodeId> {
        let t = self.value(logits);
        let (n, c) = t.shape();
        if labels.len() != n || mask.len() != n {
            return Err(Error::shape("cross_entropy", (n, c), (labels.len(), 1)));
        }
        let n_masked = mask.iter().filter(|&&m| m).count();
        if n_masked == 0 {
            return Err(Error::contract("cross_entropy with all-false mask"));
        }
        let mut total = 0.0;
        for i in 0..n {
            if !mask[i] {
                continue;
            }
            if labels[i] >= c {
                return Err(Error::contract(format!(
                    "label {} out of range 0..{c} at masked row {i}",
                    labels[i]
                )));
            }
            let row = t.row(i);
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let log_sum: f64 = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
            total += log_sum - row[labels[i]];
        }
        let loss = Tensor::from_vec(1, 1, vec![total / n_masked as f64]).unwrap();
        Ok(self.push(loss, Op::CrossEntropy { logits: logits.0, labels, mask }))
    }

    /// Propagates gradients from a scalar loss node back to every node.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::shape("backward", self.value(loss).shape(), (1, 1)));
        }
        // Gradient buffers materialize lazily: a slot stays `None` until
        // something accumulates into it, which skips whole untouched
        // subgraphs without scanning them.
        fn buf(slot: &mut Option<Tensor>, rows: usize, cols: usize) -> &mut Tensor {
            slot.get_or_insert_with(|| Tensor::zeros(rows, cols))
        }

        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::filled(1, 1, 1.0));

        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].tracked {
                continue;
            }
            // Parents always precede their output, so split keeps borrows disjoint.
            let (head, tail) = grads.split_at_mut(i);
            let g_out = match &tail[0] {
                Some(g) => g,
                None => continue,
            };
            let tracked = |id: usize| self.nodes[id].tracked;
            let shape = |id: usize| self.nodes[id].value.shape();
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::MatMul { a, b } => {
                    let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    if tracked(*a) {
                        let da = matmul_nt(g_out, vb);
                        let (r, c) = shape(*a);
                        buf(&mut head[*a], r, c).add_assign(&da);
                    }
                    if tracked(*b) {
                        let db = matmul_tn(va, g_out);
                        let (r, c) = shape(*b);
                        buf(&mut head[*b], r, c).add_assign(&db);
                    }
                }
                Op::Add { a, b } => {
                    if tracked(*a) {
                        let (r, c) = shape(*a);
                        buf(&mut head[*a], r, c).add_assign(g_out);
                    }
                    if tracked(*b) {
                        let (r, c) = shape(*b);
                        buf(&mut head[*b], r, c).add_assign(g_out);
                    }
                }
                Op::AddBias { x, bias } => {
                    if tracked(*x) {
                        let (r, c) = shape(*x);
                        buf(&mut head[*x], r, c).add_assign(g_out);
                    }
                    if tracked(*bias) {
                        let (_, cols) = shape(*bias);
                        let gb = buf(&mut head[*bias], 1, cols).data_mut();
                        for row in g_out.data().chunks(cols) {
                            for (b, &g) in gb.iter_mut().zip(row) {
                                *b += g;
                            }
                        }
                    }
                }
                Op::SliceCols { x, from, to } => {
                    let width = to - from;
                    let (rows, cols) = shape(*x);
                    let gx = buf(&mut head[*x], rows, cols).data_mut();
                    for (r, grow) in g_out.data().chunks(width).enumerate() {
                        for (dst, &g) in gx[r * cols + from..r * cols + to].iter_mut().zip(grow) {
                            *dst += g;
                        }
                    }
                }
                Op::Scale { x, factor } => {
                    let factor = *factor;
                    let (r, c) = shape(*x);
                    for (dst, &g) in buf(&mut head[*x], r, c).data_mut().iter_mut().zip(g_out.data()) {
                        *dst += factor * g;
                    }
                }
                Op::ScaleByNode { x, scalar } => {
                    let factor = self.nodes[*scalar].value.data()[0];
                    if tracked(*x) {
                        let (r, c) = shape(*x);
                        for (dst, &g) in
                            buf(&mut head[*x], r, c).data_mut().iter_mut().zip(g_out.data())
                        {
                            *dst += factor * g;
                        }
                    }
                    if tracked(*scalar) {
                        let vx = self.nodes[*x].value.data();
                        let mut acc = 0.0;
                        for (&xv, &g) in vx.iter().zip(g_out.data()) {
                            acc += xv * g;
                        }
                        buf(&mut head[*scalar], 1, 1).data_mut()[0] += acc;
                    }
                }
                Op::MulElem { a, b } => {
                    // Sequential accumulation keeps a == b correct.
                    let db: Vec<f64> = self.nodes[*a]
                        .value
                        .data()
                        .iter()
                        .zip(g_out.data())
                        .map(|(&av, &g)| av * g)
                        .collect();
                    let da: Vec<f64> = self.nodes[*b]
                        .value
                        .data()
                        .iter()
                        .zip(g_out.data())
                        .map(|(&bv, &g)| bv * g)
                        .collect();
                    let (r, c) = shape(*a);
                    for (dst, d) in buf(&mut head[*a], r, c).data_mut().iter_mut().zip(&da) {
                        *dst += *d;
                    }
                    let (r, c) = shape(*b);
                    for (dst, d) in buf(&mut head[*b], r, c).data_mut().iter_mut().zip(&db) {
                        *dst += *d;
                    }
                }
                Op::Sum { x } => {
                    let g = g_out.data()[0];
                    let (r, c) = shape(*x);
                    for dst in buf(&mut head[*x], r, c).data_mut() {
                        *dst += g;
                    }
                }
                Op::LeakyRelu { x, slope } => {
                    let slope = *slope;
                    let vx = self.nodes[*x].value.data();
                    let (r, c) = shape(*x);
                    for ((dst, &g), &v) in buf(&mut head[*x], r, c)
                        .data_mut()
                        .iter_mut()
                        .zip(g_out.data())
                        .zip(vx)
                    {
                        *dst += if v < 0.0 { slope * g } else { g };
                    }
                }
                Op::Elu { x } => {
                    let vx = self.nodes[*x].value.data();
                    let vy = self.nodes[i].value.data();
                    let (r, c) = shape(*x);
                    let gx = buf(&mut head[*x], r, c).data_mut();
                    for k in 0..vx.len() {
                        // d/dx = 1 for x >= 0, exp(x) = y + 1 below zero.
                        let d = if vx[k] < 0.0 { vy[k] + 1.0 } else { 1.0 };
                        gx[k] += d * g_out.data()[k];
                    }
                }
                Op::SegmentSoftmax { logits, segments } => {
                    let y = self.nodes[i].value.data();
                    let n_segments = segments.iter().copied().max().map_or(0, |m| m + 1);
                    let mut seg_dot = vec![0.0; n_segments];
                    for ((&yv, &g), &s) in y.iter().zip(g_out.data()).zip(segments.iter()) {
                        seg_dot[s] += yv * g;
                    }
                    let (r, c) = shape(*logits);
                    let gl = buf(&mut head[*logits], r, c).data_mut();
                    for (k, (&yv, &g)) in y.iter().zip(g_out.data()).enumerate() {
                        gl[k] += yv * (g - seg_dot[segments[k]]);
                    }
                }
                Op::EdgeLogits { per_target, per_source, edge_term, src, tgt } => {
                    let g = g_out.data();
                    if tracked(*per_target) {
                        let (r, c) = shape(*per_target);
                        let gs = buf(&mut head[*per_target], r, c).data_mut();
                        for (e, &t) in tgt.iter().enumerate() {
                            gs[t] += g[e];
                        }
                    }
                    if tracked(*per_source) {
                        let (r, c) = shape(*per_source);
                        let gt = buf(&mut head[*per_source], r, c).data_mut();
                        for (e, &s) in src.iter().enumerate() {
                            gt[s] += g[e];
                        }
                    }
                    if tracked(*edge_term) {
                        let (r, c) = shape(*edge_term);
                        buf(&mut head[*edge_term], r, c).add_assign(g_out);
                    }
                }
                Op::AttnAggregate { feats, alpha, src, tgt } => {
                    let g = g_out.data();
                    let d = self.nodes[*feats].value.cols();
                    let vf = &self.nodes[*feats].value;
                    let va = self.nodes[*alpha].value.data();
                    match (tracked(*alpha), tracked(*feats)) {
                        (true, true) => {
                            // One pass over the edges feeds both gradients,
                            // reusing the gathered target row.
                            let (ar, ac) = shape(*alpha);
                            let (fr, fc) = shape(*feats);
                            buf(&mut head[*alpha], ar, ac);
                            buf(&mut head[*feats], fr, fc);
                            let [ga_slot, gf_slot] = head
                                .get_disjoint_mut([*alpha, *feats])
                                .expect("distinct tape nodes");
                            let ga = ga_slot.as_mut().unwrap().data_mut();
                            let gf = gf_slot.as_mut().unwrap().data_mut();
                            for e in 0..src.len() {
                                let w = va[e];
                                let grow = &g[tgt[e] * d..(tgt[e] + 1) * d];
                                let frow = vf.row(src[e]);
                                let gfrow = &mut gf[src[e] * d..(src[e] + 1) * d];
                                let mut acc = 0.0;
                                for ((&gv, &fv), dst) in
                                    grow.iter().zip(frow).zip(gfrow.iter_mut())
                                {
                                    acc += gv * fv;
                                    *dst += w * gv;
                                }
                                ga[e] += acc;
                            }
                        }
                        (true, false) => {
                            let (r, c) = shape(*alpha);
                            let ga = buf(&mut head[*alpha], r, c).data_mut();
                            for e in 0..src.len() {
                                let grow = &g[tgt[e] * d..(tgt[e] + 1) * d];
                                let frow = vf.row(src[e]);
                                let mut acc = 0.0;
                                for (&gv, &fv) in grow.iter().zip(frow) {
                                    acc += gv * fv;
                                }
                                ga[e] += acc;
                            }
                        }
                        (false, true) => {
                            let (r, c) = shape(*feats);
                            let gf = buf(&mut head[*feats], r, c).data_mut();
                            for e in 0..src.len() {
                                let w = va[e];
                                let grow = &g[tgt[e] * d..(tgt[e] + 1) * d];
                                let frow = &mut gf[src[e] * d..(src[e] + 1) * d];
                                for (dst, &gv) in frow.iter_mut().zip(grow) {
                                    *dst += w * gv;
                                }
                            }
                        }
                        (false, false) => {}
                    }
                }
                Op::ConcatCols { parts } => {
                    let cols = self.nodes[i].value.cols();
                    let rows = self.nodes[i].value.rows();
                    let mut offset = 0;
                    for &p in parts {
                        let (pr, pc) = shape(p);
                        if tracked(p) {
                            let gp = buf(&mut head[p], pr, pc).data_mut();
                            for r in 0..rows {
                                let grow = &g_out.data()[r * cols + offset..r * cols + offset + pc];
                                for (dst, &g) in gp[r * pc..(r + 1) * pc].iter_mut().zip(grow) {
                                    *dst += g;
                                }
                            }
                        }
                        offset += pc;
                    }
                }
                Op::MeanParts { parts } => {
                    let w = 1.0 / parts.len() as f64;
                    for &p in parts {
                        if !tracked(p) {
                            continue;
                        }
                        let (pr, pc) = shape(p);
                        for (dst, &g) in buf(&mut head[p], pr, pc).data_mut().iter_mut().zip(g_out.data()) {
                            *dst += w * g;
                        }
                    }
                }
                Op::CrossEntropy { logits, labels, mask } => {
                    let g = g_out.data()[0];
                    let t = &self.nodes[*logits].value;
                    let (n, c) = t.shape();
                    let n_masked = mask.iter().filter(|&&m| m).count() as f64;
                    let gl = buf(&mut head[*logits], n, c).data_mut();
                    for r in 0..n {
                        if !mask[r] {
                            continue;
                        }
                        let row = t.row(r);
                        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                        let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
                        for k in 0..c {
                            let p = (row[k] - max).exp() / sum;
                            let indicator = if k == labels[r] { 1.0 } else { 0.0 };
                            gl[r * c + k] += g * (p - indicator) / n_masked;
                        }
                    }
                }
            }
        }
        self.grads = Some(grads);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(vals: &[f64]) -> Tensor {
        Tensor::column(vals.to_vec())
    }

    #[test]
    fn leaky_relu_examples() {
        let mut tape = Tape::new();
        let x = tape.leaf(col(&[3.0, -2.0, 0.0]));
        let y = tape.leaky_relu(x, 0.2).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, -0.4, 0.0]);
    }

    #[test]
    fn leaky_relu_rejects_bad_slope() {
        let mut tape = Tape::new();
        let x = tape.leaf(col(&[1.0]));
        assert!(tape.leaky_relu(x, 1.5).is_err());
        assert!(tape.leaky_relu(x, 0.0).is_err());
    }

    #[test]
    fn elu_examples() {
        let mut tape = Tape::new();
        let x = tape.leaf(col(&[0.0, 2.0, -1.0]));
        let y = tape.elu(x);
        let out = tape.value(y).data();
        assert_eq!(out[0], 0.0);
        assert_eq!(out[1], 2.0);
        assert!((out[2] - ((-1.0f64).exp() - 1.0)).abs() < 1e-15);
        assert!((out[2] + 0.6321).abs() < 1e-4);
    }

    #[test]
    fn segment_softmax_singleton_and_symmetry() {
        let mut tape = Tape::new();
        let x = tape.leaf(col(&[5.0]));
        let y = tape.segment_softmax(x, Arc::new(vec![0]), 1).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0]);

        let x = tape.leaf(col(&[1.0, 1.0]));
        let y = tape.segment_softmax(x, Arc::new(vec![0, 0]), 1).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn segment_softmax_matches_direct_evaluation() {
        // Independent route: explicit exponential sums.
        let mut tape = Tape::new();
        let x = tape.leaf(col(&[0.0, 1.0, 2.0]));
        let y = tape.segment_softmax(x, Arc::new(vec![0, 0, 0]), 1).unwrap();
        let s: f64 = [0.0f64, 1.0, 2.0].iter().map(|v| v.exp()).sum();
        let expect = [1.0 / s, 1.0f64.exp() / s, 2.0f64.exp() / s];
        for (got, want) in tape.value(y).data().iter().zip(&expect) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!((expect[0] - 0.0900).abs() < 1e-4);
        assert!((expect[1] - 0.2447).abs() < 1e-4);
        assert!((expect[2] - 0.6652).abs() < 1e-4);
    }

    #[test]
    fn segment_softmax_rejects_empty() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(0, 1));
        assert!(tape.segment_softmax(x, Arc::new(vec![]), 0).is_err());
    }

    #[test]
    fn segment_softmax_sums_to_one_within_segments() {
        use rand::Rng;
        let mut rng = crate::seeding::rng_from(11);
        for _ in 0..50 {
            let n_seg = rng.random_range(1..6usize);
            let n = rng.random_range(n_seg..40);
            let mut segments: Vec<usize> = (0..n_seg).collect();
            for _ in n_seg..n {
                segments.push(rng.random_range(0..n_seg));
            }
            let logits: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 20.0 - 10.0).collect();
            let mut tape = Tape::new();
            let x = tape.leaf(col(&logits));
            let y = tape.segment_softmax(x, Arc::new(segments.clone()), n_seg).unwrap();
            let mut sums = vec![0.0; n_seg];
            for (&v, &s) in tape.value(y).data().iter().zip(&segments) {
                assert!(v > 0.0);
                sums[s] += v;
            }
            for s in sums {
                assert!((s - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn cross_entropy_confident_and_uniform() {
        let mut tape = Tape::new();
        let logits = tape.leaf(Tensor::from_vec(1, 2, vec![10.0, -10.0]).unwrap());
        let loss = tape
            .cross_entropy(logits, Arc::new(vec![0]), Arc::new(vec![true]))
            .unwrap();
        let v = tape.scalar(loss);
        assert!((v - 2.061e-9).abs() < 1e-11, "confident correct loss was {v}");

        let mut tape = Tape::new();
        let logits = tape.leaf(Tensor::zeros(1, 50));
        let loss = tape
            .cross_entropy(logits, Arc::new(vec![7]), Arc::new(vec![true]))
            .unwrap();
        assert!((tape.scalar(loss) - 50.0f64.ln()).abs() < 1e-12);
        assert!((50.0f64.ln() - 3.912).abs() < 1e-3);
    }

    #[test]
    fn cross_entropy_masked_rows_do_not_contribute() {
        let rows = vec![1.0, -0.5, 2.0, 0.25, -3.0, 1.5];
        let mut tape = Tape::new();
        let both = tape.leaf(Tensor::from_vec(2, 3, rows.clone()).unwrap());
        let masked = tape
            .cross_entropy(both, Arc::new(vec![2, 0]), Arc::new(vec![true, false]))
            .unwrap();

        let mut single_tape = Tape::new();
        let single = single_tape.leaf(Tensor::from_vec(1, 3, rows[..3].to_vec()).unwrap());
        let single_loss = single_tape
            .cross_entropy(single, Arc::new(vec![2]), Arc::new(vec![true]))
            .unwrap();
        assert_eq!(tape.scalar(masked), single_tape.scalar(single_loss));

        tape.backward(masked).unwrap();
        let g = tape.grad(both);
        assert!(g.row(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cross_entropy_rejects_all_false_mask_and_bad_label() {
        let mut tape = Tape::new();
        let logits = tape.leaf(Tensor::zeros(2, 3));
        assert!(tape
            .cross_entropy(logits, Arc::new(vec![0, 0]), Arc::new(vec![false, false]))
            .is_err());
        assert!(tape
            .cross_entropy(logits, Arc::new(vec![0, 3]), Arc::new(vec![true, true]))
            .is_err());
    }

    #[test]
    fn ops_are_deterministic() {
        let run = || {
            let mut tape = Tape::new();
            let a = tape.leaf(Tensor::from_vec(2, 3, vec![0.1, -0.2, 0.3, 1.7, 0.0, -2.5]).unwrap());
            let b = tape.leaf(Tensor::from_vec(3, 2, vec![0.5, 0.25, -1.0, 2.0, 0.125, 3.0]).unwrap());
            let m = tape.matmul(a, b).unwrap();
            let e = tape.elu(m);
            let s = tape.sum(e);
            tape.backward(s).unwrap();
            (
                tape.value(s).data().to_vec(),
                tape.grad(a).data().to_vec(),
                tape.grad(b).data().to_vec(),
            )
        };
        let (v1, ga1, gb1) = run();
        let (v2, ga2, gb2) = run();
        assert_eq!(v1, v2);
        assert_eq!(ga1, ga2);
        assert_eq!(gb1, gb2);
    }
}
