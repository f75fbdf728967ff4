use std::collections::HashMap;
use std::sync::Arc;

use super::kernels::{gemm, MatRef};
use super::{split_axis, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
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
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulRows {
        x: Var,
        s: Var,
    },
    MatMul(Var, Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Relu(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    SumAxis {
        x: Var,
        axis: usize,
    },
    SumAll(Var),
    MeanAll(Var),
    MaxAxis {
        x: Var,
        arg: Vec<usize>,
    },
    Gather {
        x: Var,
        index: Arc<[usize]>,
    },
    SegmentMax {
        x: Var,
        arg: Vec<usize>,
    },
    Reshape(Var),
    Concat(Vec<Var>),
    Norm {
        x: Var,
        axis: usize,
    },
    MinMax {
        x: Var,
        axis: usize,
        arg_min: Vec<usize>,
        arg_max: Vec<usize>,
        range: Vec<f64>,
    },
    ChannelNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        labels: Arc<[usize]>,
        probs: Vec<f64>,
    },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Param(_) => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::MulRows { x, s } => vec![*x, *s],
            Op::Linear { x, w, b } => {
                let mut v = vec![*x, *w];
                v.extend(b.iter().copied());
                v
            }
            Op::ChannelNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Concat(vs) => vs.clone(),
            Op::Scale(x, _)
            | Op::Relu(x)
            | Op::SumAll(x)
            | Op::MeanAll(x)
            | Op::Reshape(x)
            | Op::Softmax { x, .. }
            | Op::SumAxis { x, .. }
            | Op::MaxAxis { x, .. }
            | Op::Gather { x, .. }
            | Op::SegmentMax { x, .. }
            | Op::Norm { x, .. }
            | Op::MinMax { x, .. }
            | Op::CrossEntropy { logits: x, .. } => vec![*x],
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Define-by-run record of a forward computation.
///
/// Nodes are appended in execution order, so the node list is already a
/// topological order and backward simply walks it from the end.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    /// Accumulated gradients of leaves and parameters across backward calls.
    accumulated: HashMap<usize, Vec<f64>>,
    params: HashMap<ParamId, Var>,
    visit_log: Option<Vec<usize>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Parameter behind a node recorded with [`Tape::param`].
    pub fn param_id(&self, v: Var) -> Option<ParamId> {
        match self.nodes[v.0].op {
            Op::Param(id) => Some(id),
            _ => None,
        }
    }

    /// Input nodes of `v`, in argument order.
    pub fn inputs_of(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.inputs()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push_raw(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Records a parameter once per tape; later calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push_raw(store.get(id).clone(), Op::Param(id), true);
        self.params.insert(id, v);
        v
    }

    /// Accumulated gradient of a leaf or parameter node.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        self.accumulated
            .get(&v.0)
            .map(|g| Tensor::new(self.shape(v).to_vec(), g.clone()).expect("grad shape"))
    }

    /// Accumulated gradients for every parameter seen on this tape.
    pub fn param_grads(&self) -> Vec<(ParamId, Tensor)> {
        let mut out: Vec<_> = self
            .params
            .iter()
            .filter_map(|(&id, &v)| self.grad(v).map(|g| (id, g)))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }

    pub fn zero_grad(&mut self) {
        self.accumulated.clear();
    }

    /// Starts recording the order in which backward visits nodes.
    pub fn record_visits(&mut self) {
        self.visit_log = Some(Vec::new());
    }

    pub fn visits(&self) -> Option<&[usize]> {
        self.visit_log.as_deref()
    }

    fn push_raw(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let needs_grad = op.inputs().iter().any(|i| self.nodes[i.0].needs_grad);
        self.push_raw(value, op, needs_grad)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data).expect("same shape")
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(a);
        Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect())
            .expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip_map(a, b, |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_map(a, b, |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_map(a, b, |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let v = self.map(a, |x| x * factor);
        self.push(v, Op::Scale(a, factor))
    }

    /// Multiplies every row of `x` (last axis) by the matching scalar in `s`,
    /// whose shape must equal `x`'s shape without the last axis.
    pub fn mul_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let xs = self.shape(x);
        if xs.is_empty() || &xs[..xs.len() - 1] != self.shape(s) {
            return Err(Error::shape("mul_rows", xs, self.shape(s)));
        }
        let (tx, ts) = (self.value(x), self.value(s));
        let c = tx.last_dim();
        let mut data = tx.data().to_vec();
        for (row, &k) in data.chunks_mut(c.max(1)).zip(ts.data()) {
            row.iter_mut().for_each(|v| *v *= k);
        }
        let v = Tensor::new(tx.shape().to_vec(), data)?;
        Ok(self.push(v, Op::MulRows { x, s }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            MatRef::new(self.value(a).data(), m, k),
            MatRef::new(self.value(b).data(), k, n),
            &mut out,
            false,
        );
        let v = Tensor::new(vec![m, n], out)?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// Affine map over the last axis: `x W + b`, broadcast over leading axes.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sw.len() != 2 || sx.is_empty() || *sx.last().unwrap() != sw[0] {
            return Err(Error::shape("linear", sx, sw));
        }
        let (cin, cout) = (sw[0], sw[1]);
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(Error::shape("linear bias", sw, self.shape(b)));
            }
        }
        let tx = self.value(x);
        let rows = tx.rows();
        let mut out = vec![0.0; rows * cout];
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in out.chunks_mut(cout.max(1)) {
                row.copy_from_slice(bias);
            }
        }
        gemm(
            MatRef::new(tx.data(), rows, cin),
            MatRef::new(self.value(w).data(), cin, cout),
            &mut out,
            b.is_some(),
        );
        let mut shape = sx.to_vec();
        *shape.last_mut().unwrap() = cout;
        let v = Tensor::new(shape, out)?;
        Ok(self.push(v, Op::Linear { x, w, b }))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.map(a, |x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    /// Softmax along `axis`, shifted by the per-slice maximum.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        let (outer, len, inner) = split_axis(t.shape(), axis)?;
        let src = t.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut max = f64::NEG_INFINITY;
                for j in 0..len {
                    max = max.max(src[base + j * inner]);
                }
                let mut total = 0.0;
                for j in 0..len {
                    let e = (src[base + j * inner] - max).exp();
                    out[base + j * inner] = e;
                    total += e;
                }
                for j in 0..len {
                    out[base + j * inner] /= total;
                }
            }
        }
        let v = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(v, Op::Softmax { x, axis }))
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        let (outer, len, inner) = split_axis(t.shape(), axis)?;
        let src = t.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                let s = &src[(o * len + j) * inner..(o * len + j + 1) * inner];
                let d = &mut out[o * inner..(o + 1) * inner];
                for (dv, sv) in d.iter_mut().zip(s) {
                    *dv += sv;
                }
            }
        }
        let mut shape = t.shape().to_vec();
        shape.remove(axis);
        let v = Tensor::new(shape, out)?;
        Ok(self.push(v, Op::SumAxis { x, axis }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(v, Op::SumAll(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let v = Tensor::scalar(t.sum() / t.len().max(1) as f64);
        self.push(v, Op::MeanAll(x))
    }

    /// Maximum along `axis`; ties resolve to the lowest index.
    pub fn max_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        let (outer, len, inner) = split_axis(t.shape(), axis)?;
        if len == 0 {
            return Err(Error::InvalidArgument("max over an empty axis".into()));
        }
        let src = t.data();
        let mut out = vec![0.0; outer * inner];
        let mut arg = vec![0usize; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut best = base;
                for j in 1..len {
                    let idx = base + j * inner;
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                out[o * inner + i] = src[best];
                arg[o * inner + i] = best;
            }
        }
        let mut shape = t.shape().to_vec();
        shape.remove(axis);
        let v = Tensor::new(shape, out)?;
        Ok(self.push(v, Op::MaxAxis { x, arg }))
    }

    /// Selects rows along the first axis.
    pub fn gather(&mut self, x: Var, index: impl Into<Arc<[usize]>>) -> Result<Var> {
        let index: Arc<[usize]> = index.into();
        let t = self.value(x);
        if t.rank() == 0 {
            return Err(Error::InvalidAxis { axis: 0, rank: 0 });
        }
        let n = t.shape()[0];
        let width: usize = t.shape()[1..].iter().product();
        let mut out = Vec::with_capacity(index.len() * width);
        for &i in index.iter() {
            if i >= n {
                return Err(Error::IndexOutOfRange { index: i, len: n });
            }
            out.extend_from_slice(&t.data()[i * width..(i + 1) * width]);
        }
        let mut shape = t.shape().to_vec();
        shape[0] = index.len();
        let v = Tensor::new(shape, out)?;
        Ok(self.push(v, Op::Gather { x, index }))
    }

    /// Per-segment channel maximum of a `[N, C]` tensor. `segment_of[i]` in
    /// `[0, segments)`; every segment must be non-empty.
    pub fn segment_max(&mut self, x: Var, segment_of: &[usize], segments: usize) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 2 || t.shape()[0] != segment_of.len() {
            return Err(Error::shape("segment_max", t.shape(), &[segment_of.len()]));
        }
        let c = t.shape()[1];
        let mut out = vec![f64::NEG_INFINITY; segments * c];
        let mut arg = vec![usize::MAX; segments * c];
        for (i, &s) in segment_of.iter().enumerate() {
            if s >= segments {
                return Err(Error::IndexOutOfRange {
                    index: s,
                    len: segments,
                });
            }
            for ch in 0..c {
                let src = i * c + ch;
                let dst = s * c + ch;
                if arg[dst] == usize::MAX || t.data()[src] > out[dst] {
                    out[dst] = t.data()[src];
                    arg[dst] = src;
                }
            }
        }
        if c > 0 && arg.iter().any(|&a| a == usize::MAX) {
            return Err(Error::InvalidArgument("segment_max: empty segment".into()));
        }
        let v = Tensor::new(vec![segments, c], out)?;
        Ok(self.push(v, Op::SegmentMax { x, arg }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshape(shape)?;
        Ok(self.push(v, Op::Reshape(x)))
    }

    /// Concatenates along the last axis; leading shapes must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
        let lead = self.shape(first)[..self.shape(first).len().saturating_sub(1)].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return Err(Error::shape("concat", self.shape(first), s));
            }
            widths.push(*s.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let v = Tensor::new(shape, out)?;
        Ok(self.push(v, Op::Concat(parts.to_vec())))
    }

    /// Euclidean norm along `axis` (absolute value for a singleton axis).
    pub fn norm(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        let (outer, len, inner) = split_axis(t.shape(), axis)?;
        let src = t.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let ss: f64 = (0..len).map(|j| src[base + j * inner].powi(2)).sum();
                out[o * inner + i] = ss.sqrt();
            }
        }
        let mut shape = t.shape().to_vec();
        shape.remove(axis);
        let v = Tensor::new(shape, out)?;
        Ok(self.push(v, Op::Norm { x, axis }))
    }

    /// Rescales each slice along `axis` to `[0, 1]`. A slice whose maximum
    /// equals its minimum maps to all zeros.
    pub fn min_max_normalize(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        let (outer, len, inner) = split_axis(t.shape(), axis)?;
        let src = t.data();
        let mut out = vec![0.0; src.len()];
        let mut arg_min = vec![0usize; outer * inner];
        let mut arg_max = vec![0usize; outer * inner];
        let mut range = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let (mut lo, mut hi) = (base, base);
                for j in 1..len {
                    let idx = base + j * inner;
                    if src[idx] < src[lo] {
                        lo = idx;
                    }
                    if src[idx] > src[hi] {
                        hi = idx;
                    }
                }
                let slot = o * inner + i;
                arg_min[slot] = lo;
                arg_max[slot] = hi;
                if len == 0 {
                    continue;
                }
                let r = src[hi] - src[lo];
                range[slot] = r;
                if r > 0.0 {
                    for j in 0..len {
                        let idx = base + j * inner;
                        out[idx] = (src[idx] - src[lo]) / r;
                    }
                }
            }
        }
        let v = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(
            v,
            Op::MinMax {
                x,
                axis,
                arg_min,
                arg_max,
                range,
            },
        ))
    }

    /// Per-channel standardization over all leading positions followed by a
    /// learnable scale and shift.
    pub fn channel_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let t = self.value(x);
        let c = t.last_dim();
        if t.rank() == 0 || self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::shape("channel_norm", t.shape(), self.shape(gamma)));
        }
        let rows = t.rows();
        let src = t.data();
        let mut mean = vec![0.0; c];
        for row in src.chunks(c) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        let inv_rows = 1.0 / rows.max(1) as f64;
        mean.iter_mut().for_each(|m| *m *= inv_rows);
        let mut var = vec![0.0; c];
        for row in src.chunks(c) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let inv_std: Vec<f64> = var.iter().map(|s| 1.0 / (s * inv_rows + eps).sqrt()).collect();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; src.len()];
        let mut out = vec![0.0; src.len()];
        for (r, row) in src.chunks(c).enumerate() {
            for ch in 0..c {
                let h = (row[ch] - mean[ch]) * inv_std[ch];
                xhat[r * c + ch] = h;
                out[r * c + ch] = g[ch] * h + b[ch];
            }
        }
        let v = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(
            v,
            Op::ChannelNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    /// Mean negative log-likelihood of `labels` under row-wise softmax of
    /// `[N, T]` logits.
    pub fn cross_entropy(&mut self, logits: Var, labels: impl Into<Arc<[usize]>>) -> Result<Var> {
        let labels: Arc<[usize]> = labels.into();
        let t = self.value(logits);
        if t.rank() != 2 || t.shape()[0] != labels.len() {
            return Err(Error::shape("cross_entropy", t.shape(), &[labels.len()]));
        }
        let classes = t.shape()[1];
        let mut probs = vec![0.0; t.len()];
        let mut total = 0.0;
        for (i, (row, &y)) in t.data().chunks(classes.max(1)).zip(labels.iter()).enumerate() {
            if y >= classes {
                return Err(Error::IndexOutOfRange {
                    index: y,
                    len: classes,
                });
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + z.ln();
            total += lse - row[y];
            for (p, v) in probs[i * classes..(i + 1) * classes].iter_mut().zip(row) {
                *p = (v - lse).exp();
            }
        }
        let v = Tensor::scalar(total / labels.len().max(1) as f64);
        Ok(self.push(
            v,
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            },
        ))
    }

    /// Reverse pass from a scalar. Gradients of leaves and parameters
    /// accumulate across calls until [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss {
                shape: self.shape(loss).to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if let Some(log) = self.visit_log.as_mut() {
                log.push(i);
            }
            let (before, _) = grads.split_at_mut(i);
            match &node.op {
                Op::Leaf | Op::Param(_) => {
                    let acc = self
                        .accumulated
                        .entry(i)
                        .or_insert_with(|| vec![0.0; g.len()]);
                    add_into(acc, &g);
                }
                op => backprop(&self.nodes, op, &node.value, &g, before),
            }
        }
        Ok(())
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Returns the gradient slot for `v`, allocating zeros on first touch, or
/// `None` when `v` does not need a gradient.
fn slot<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
    if !nodes[v.0].needs_grad {
        return None;
    }
    let len = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
}

/// Adds `f(i)` into the slot for `v`; the first contribution is written
/// directly instead of onto a zeroed buffer.
fn put(nodes: &[Node], grads: &mut [Option<Vec<f64>>], v: Var, f: impl Fn(usize) -> f64) {
    if !nodes[v.0].needs_grad {
        return;
    }
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().enumerate().for_each(|(i, d)| *d += f(i)),
        empty => *empty = Some((0..nodes[v.0].value.len()).map(f).collect()),
    }
}

fn backprop(nodes: &[Node], op: &Op, out: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let val = |v: Var| &nodes[v.0].value;
    match op {
        Op::Leaf | Op::Param(_) => unreachable!(),
        Op::Add(a, b) => {
            put(nodes, grads, *a, |i| g[i]);
            put(nodes, grads, *b, |i| g[i]);
        }
        Op::Sub(a, b) => {
            put(nodes, grads, *a, |i| g[i]);
            put(nodes, grads, *b, |i| -g[i]);
        }
        Op::Mul(a, b) => {
            let (x, y) = (val(*a).data(), val(*b).data());
            put(nodes, grads, *a, |i| g[i] * y[i]);
            put(nodes, grads, *b, |i| g[i] * x[i]);
        }
        Op::Scale(a, f) => put(nodes, grads, *a, |i| g[i] * f),
        Op::MulRows { x, s } => {
            let c = val(*x).last_dim().max(1);
            let k = val(*s).data();
            put(nodes, grads, *x, |i| g[i] * k[i / c]);
            if let Some(gs) = slot(nodes, grads, *s) {
                for ((d, grow), xrow) in gs.iter_mut().zip(g.chunks(c)).zip(val(*x).data().chunks(c)) {
                    *d += grow.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
        Op::MatMul(a, b) => {
            let (m, k) = (val(*a).shape()[0], val(*a).shape()[1]);
            let n = val(*b).shape()[1];
            if let Some(ga) = slot(nodes, grads, *a) {
                gemm(
                    MatRef::new(g, m, n),
                    MatRef::new(val(*b).data(), k, n).t(),
                    ga,
                    true,
                );
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                gemm(
                    MatRef::new(val(*a).data(), m, k).t(),
                    MatRef::new(g, m, n),
                    gb,
                    true,
                );
            }
        }
        Op::Linear { x, w, b } => {
            let (cin, cout) = (val(*w).shape()[0], val(*w).shape()[1]);
            let rows = val(*x).rows();
            if let Some(gx) = slot(nodes, grads, *x) {
                gemm(
                    MatRef::new(g, rows, cout),
                    MatRef::new(val(*w).data(), cin, cout).t(),
                    gx,
                    true,
                );
            }
            if let Some(gw) = slot(nodes, grads, *w) {
                gemm(
                    MatRef::new(val(*x).data(), rows, cin).t(),
                    MatRef::new(g, rows, cout),
                    gw,
                    true,
                );
            }
            if let Some(b) = b {
                if let Some(gb) = slot(nodes, grads, *b) {
                    for row in g.chunks(cout.max(1)) {
                        add_into(gb, row);
                    }
                }
            }
        }
        Op::Relu(a) => {
            let y = out.data();
            put(nodes, grads, *a, |i| if y[i] > 0.0 { g[i] } else { 0.0 });
        }
        Op::Softmax { x, axis } => {
            if let Some(gx) = slot(nodes, grads, *x) {
                let (outer, len, inner) = split_axis(out.shape(), *axis).expect("axis");
                let y = out.data();
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let dot: f64 = (0..len)
                            .map(|j| g[base + j * inner] * y[base + j * inner])
                            .sum();
                        for j in 0..len {
                            let idx = base + j * inner;
                            gx[idx] += y[idx] * (g[idx] - dot);
                        }
                    }
                }
            }
        }
        Op::SumAxis { x, axis } => {
            if let Some(gx) = slot(nodes, grads, *x) {
                let (outer, len, inner) = split_axis(val(*x).shape(), *axis).expect("axis");
                for o in 0..outer {
                    let src = &g[o * inner..(o + 1) * inner];
                    for j in 0..len {
                        let base = (o * len + j) * inner;
                        add_into(&mut gx[base..base + inner], src);
                    }
                }
            }
        }
        Op::SumAll(x) => {
            if let Some(gx) = slot(nodes, grads, *x) {
                gx.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        Op::MeanAll(x) => {
            if let Some(gx) = slot(nodes, grads, *x) {
                let s = g[0] / gx.len().max(1) as f64;
                gx.iter_mut().for_each(|d| *d += s);
            }
        }
        Op::MaxAxis { x, arg, .. } | Op::SegmentMax { x, arg } => {
            if let Some(gx) = slot(nodes, grads, *x) {
                for (&src, gv) in arg.iter().zip(g) {
                    gx[src] += gv;
                }
            }
        }
        Op::Gather { x, index } => {
            if let Some(gx) = slot(nodes, grads, *x) {
                let width: usize = val(*x).shape()[1..].iter().product();
                for (r, &i) in index.iter().enumerate() {
                    add_into(&mut gx[i * width..(i + 1) * width], &g[r * width..(r + 1) * width]);
                }
            }
        }
        Op::Reshape(x) => {
            put(nodes, grads, *x, |i| g[i]);
        }
        Op::Concat(parts) => {
            let total = out.last_dim();
            let rows = out.rows();
            let mut offset = 0;
            for &p in parts {
                let w = val(p).last_dim();
                if let Some(gp) = slot(nodes, grads, p) {
                    for r in 0..rows {
                        add_into(
                            &mut gp[r * w..(r + 1) * w],
                            &g[r * total + offset..r * total + offset + w],
                        );
                    }
                }
                offset += w;
            }
        }
        Op::Norm { x, axis } => {
            if let Some(gx) = slot(nodes, grads, *x) {
                let src = val(*x).data();
                let (outer, len, inner) = split_axis(val(*x).shape(), *axis).expect("axis");
                for o in 0..outer {
                    for i in 0..inner {
                        let n = out.data()[o * inner + i];
                        if n == 0.0 {
                            continue;
                        }
                        let s = g[o * inner + i] / n;
                        let base = o * len * inner + i;
                        for j in 0..len {
                            gx[base + j * inner] += s * src[base + j * inner];
                        }
                    }
                }
            }
        }
        Op::MinMax {
            x,
            axis,
            arg_min,
            arg_max,
            range,
        } => {
            if let Some(gx) = slot(nodes, grads, *x) {
                let (outer, len, inner) = split_axis(out.shape(), *axis).expect("axis");
                let y = out.data();
                for o in 0..outer {
                    for i in 0..inner {
                        let s = o * inner + i;
                        let r = range[s];
                        if r <= 0.0 {
                            continue;
                        }
                        let base = o * len * inner + i;
                        let (mut to_min, mut to_max) = (0.0, 0.0);
                        for j in 0..len {
                            let idx = base + j * inner;
                            gx[idx] += g[idx] / r;
                            to_min += g[idx] * (y[idx] - 1.0) / r;
                            to_max -= g[idx] * y[idx] / r;
                        }
                        gx[arg_min[s]] += to_min;
                        gx[arg_max[s]] += to_max;
                    }
                }
            }
        }
        Op::ChannelNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        } => {
            let c = inv_std.len().max(1);
            let rows = xhat.len() / c;
            let gam = val(*gamma).data();
            let mut sum_g = vec![0.0; c];
            let mut sum_gx = vec![0.0; c];
            for (grow, hrow) in g.chunks(c).zip(xhat.chunks(c)) {
                for ch in 0..c {
                    sum_g[ch] += grow[ch];
                    sum_gx[ch] += grow[ch] * hrow[ch];
                }
            }
            if let Some(gg) = slot(nodes, grads, *gamma) {
                add_into(gg, &sum_gx);
            }
            if let Some(gb) = slot(nodes, grads, *beta) {
                add_into(gb, &sum_g);
            }
            if let Some(gx) = slot(nodes, grads, *x) {
                let n = rows as f64;
                for (r, (grow, hrow)) in g.chunks(c).zip(xhat.chunks(c)).enumerate() {
                    for ch in 0..c {
                        // d xhat = g * gamma; standard batch-norm input gradient.
                        let k = gam[ch] * inv_std[ch] / n;
                        gx[r * c + ch] += k * (n * grow[ch] - sum_g[ch] - hrow[ch] * sum_gx[ch]);
                    }
                }
            }
        }
        Op::CrossEntropy {
            logits,
            labels,
            probs,
        } => {
            if let Some(gl) = slot(nodes, grads, *logits) {
                let classes = val(*logits).shape()[1].max(1);
                let s = g[0] / labels.len().max(1) as f64;
                for (i, &y) in labels.iter().enumerate() {
                    for t in 0..classes {
                        let p = probs[i * classes + t];
                        let target = if t == y { 1.0 } else { 0.0 };
                        gl[i * classes + t] += s * (p - target);
                    }
                }
            }
        }
    }
}
