//! Define-by-run tape with reverse-mode gradient accumulation.
//!
//! Nodes are appended in evaluation order, so the tape index order is a
//! topological order and the backward pass is a single reverse sweep that
//! visits every node once.

use crate::error::{Error, Result};

use super::array::Tensor;
use super::param::{ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

const NO_ROW: usize = usize::MAX;

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    Linear {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    RowScale {
        x: NodeId,
        s: NodeId,
    },
    Relu(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Concat {
        inputs: Vec<NodeId>,
        outer: usize,
        blocks: Vec<usize>,
    },
    Slice {
        x: NodeId,
        outer: usize,
        in_block: usize,
        offset: usize,
        out_block: usize,
    },
    Reshape(NodeId),
    Permute {
        x: NodeId,
        // source flat index of every output element
        source: Vec<usize>,
    },
    SegmentMax {
        x: NodeId,
        argmax: Vec<usize>,
    },
    SoftmaxRows {
        x: NodeId,
        cols: usize,
    },
    SegmentSoftmax {
        x: NodeId,
        offsets: Vec<usize>,
    },
    SegmentWeightedSum {
        values: NodeId,
        weights: NodeId,
        offsets: Vec<usize>,
    },
    MatMul(NodeId, NodeId),
    Gather {
        x: NodeId,
        index: Vec<usize>,
    },
    TemporalConv {
        x: NodeId,
        k: NodeId,
        b: Option<NodeId>,
    },
    LstmCell {
        x: NodeId,
        h: NodeId,
        c: NodeId,
        w: NodeId,
        b: NodeId,
        // activated gates per row, laid out [i | f | g | o]
        gates: Vec<f64>,
        tanh_c: Vec<f64>,
    },
    GaussianHead(NodeId),
    BivariateNll {
        x: NodeId,
        target: Vec<f64>,
        mask: Vec<bool>,
    },
    Dot {
        x: NodeId,
        weights: Vec<f64>,
    },
    Sum(NodeId),
    Mean(NodeId),
}

/// One forward/backward computation. Parameters are copied in on first use
/// so a graph never aliases the store it reads from.
#[derive(Debug, Default)]
pub struct Graph {
    values: Vec<Tensor>,
    ops: Vec<Op>,
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<Option<NodeId>>,
}

fn grad_of<'a>(
    grads: &'a mut [Option<Vec<f64>>],
    values: &[Tensor],
    id: NodeId,
) -> &'a mut [f64] {
    let n = values[id.0].len();
    grads[id.0].get_or_insert_with(|| vec![0.0; n])
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.values[id.0].shape()
    }

    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }

    fn push_unchecked(&mut self, value: Tensor, op: Op) -> NodeId {
        self.values.push(value);
        self.ops.push(op);
        self.grads.push(None);
        NodeId(self.values.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        Ok(self.push_unchecked(value, op))
    }

    /// Adds a constant (non-trainable) input.
    pub fn input(&mut self, value: Tensor) -> Result<NodeId> {
        self.push(value, Op::Leaf, "input")
    }

    /// Returns the node holding parameter `id`, creating it on first use.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        let slot = id.index();
        if slot >= self.params.len() {
            self.params.resize(slot + 1, None);
        }
        if let Some(node) = self.params[slot] {
            return node;
        }
        let node = self.push_unchecked(store.tensor(id).clone(), Op::Param);
        self.params[slot] = Some(node);
        node
    }

    /// Nodes that were created for parameters, with their store ids.
    pub fn param_nodes(&self) -> impl Iterator<Item = (ParamId, NodeId)> + '_ {
        self.params
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.map(|n| (ParamId::from_index(i), n)))
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 || xs.is_empty() || *xs.last().unwrap() != ws[0] {
            return Err(Error::shape("linear", &xs, &ws));
        }
        let (din, dout) = (ws[0], ws[1]);
        if let Some(b) = b {
            if self.value(b).len() != dout {
                return Err(Error::shape("linear bias", &ws, self.shape(b)));
            }
        }
        let rows = self.value(x).rows();
        let mut out = vec![0.0; rows * dout];
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            for r in 0..rows {
                let o = &mut out[r * dout..(r + 1) * dout];
                if let Some(b) = b {
                    o.copy_from_slice(self.values[b.0].data());
                }
                for (i, &xi) in xv[r * din..(r + 1) * din].iter().enumerate() {
                    if xi == 0.0 {
                        continue;
                    }
                    for (oj, wij) in o.iter_mut().zip(&wv[i * dout..(i + 1) * dout]) {
                        *oj += xi * wij;
                    }
                }
            }
        }
        let mut shape = xs;
        *shape.last_mut().unwrap() = dout;
        self.push(Tensor::new(shape, out)?, Op::Linear { x, w, b }, "linear")
    }

    fn binary(
        &mut self,
        a: NodeId,
        b: NodeId,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(name, self.shape(a), self.shape(b)));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push(value, op, name)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Scales row `r` of `x` (viewed as `[rows × cols]`) by `s[r]`.
    pub fn row_scale(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        let rows = self.value(x).rows();
        if self.value(s).len() != rows {
            return Err(Error::shape("row_scale", self.shape(x), self.shape(s)));
        }
        let cols = self.value(x).cols();
        let sv = self.value(s).data();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v * sv[i / cols])
            .collect();
        let value = Tensor::new(self.shape(x).to_vec(), data)?;
        self.push(value, Op::RowScale { x, s }, "row_scale")
    }

    fn unary(
        &mut self,
        x: NodeId,
        name: &'static str,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        let data = self.value(x).data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(self.shape(x).to_vec(), data)?;
        self.push(value, op, name)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, "relu", |v| if v > 0.0 { v } else { 0.0 }, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, "tanh", f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, "sigmoid", sigmoid, Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, "exp", f64::exp, Op::Exp(x))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> Result<NodeId> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::invalid("concat of zero inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::invalid(format!(
                "concat axis {axis} out of range for {base:?}"
            )));
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut extent = 0;
        let mut blocks = Vec::with_capacity(inputs.len());
        for &id in inputs {
            let s = self.shape(id);
            if s.len() != base.len()
                || s[..axis] != base[..axis]
                || s[axis + 1..] != base[axis + 1..]
            {
                return Err(Error::shape("concat", &base, s));
            }
            extent += s[axis];
            blocks.push(s[axis] * inner);
        }
        let total: usize = blocks.iter().sum();
        let mut data = Vec::with_capacity(outer * total);
        for o in 0..outer {
            for (&id, &blk) in inputs.iter().zip(&blocks) {
                data.extend_from_slice(&self.value(id).data()[o * blk..(o + 1) * blk]);
            }
        }
        let mut shape = base;
        shape[axis] = extent;
        let op = Op::Concat {
            inputs: inputs.to_vec(),
            outer,
            blocks,
        };
        self.push(Tensor::new(shape, data)?, op, "concat")
    }

    /// Takes `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, x: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start + len > s[axis] {
            return Err(Error::invalid(format!(
                "slice [{start}, {}) on axis {axis} of {s:?}",
                start + len
            )));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let in_block = s[axis] * inner;
        let out_block = len * inner;
        let offset = start * inner;
        let xv = self.value(x).data();
        let mut data = Vec::with_capacity(outer * out_block);
        for o in 0..outer {
            let b = o * in_block + offset;
            data.extend_from_slice(&xv[b..b + out_block]);
        }
        let mut shape = s;
        shape[axis] = len;
        let op = Op::Slice {
            x,
            outer,
            in_block,
            offset,
            out_block,
        };
        self.push(Tensor::new(shape, data)?, op, "slice")
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.value(x).clone().reshape(shape.to_vec())?;
        self.push(value, Op::Reshape(x), "reshape")
    }

    /// Reorders axes: output axis `k` is input axis `axes[k]`.
    pub fn permute(&mut self, x: NodeId, axes: &[usize]) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        let mut seen = vec![false; s.len()];
        if axes.len() != s.len() || axes.iter().any(|&a| a >= s.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::invalid(format!("permutation {axes:?} for {s:?}")));
        }
        let mut in_strides = vec![1; s.len()];
        for k in (0..s.len().saturating_sub(1)).rev() {
            in_strides[k] = in_strides[k + 1] * s[k + 1];
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| s[a]).collect();
        let n = self.value(x).len();
        let mut source = Vec::with_capacity(n);
        let mut idx = vec![0usize; s.len()];
        for _ in 0..n {
            source.push(
                idx.iter()
                    .zip(axes)
                    .map(|(&i, &a)| i * in_strides[a])
                    .sum::<usize>(),
            );
            for k in (0..idx.len()).rev() {
                idx[k] += 1;
                if idx[k] < out_shape[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        let xv = self.value(x).data();
        let data = source.iter().map(|&i| xv[i]).collect();
        let value = Tensor::new(out_shape, data)?;
        self.push(value, Op::Permute { x, source }, "permute")
    }

    /// Per-column maximum over each row segment of `x` (`[rows × d]`).
    ///
    /// Segment `g` covers rows `offsets[g]..offsets[g + 1]`; rows with a
    /// false `mask` entry are skipped. An empty segment yields zeros. Ties go
    /// to the lowest row index.
    pub fn segment_max(
        &mut self,
        x: NodeId,
        offsets: &[usize],
        mask: Option<&[bool]>,
    ) -> Result<NodeId> {
        let rows = self.value(x).rows();
        let d = self.value(x).cols();
        check_offsets("segment_max", offsets, rows)?;
        if let Some(m) = mask {
            if m.len() != rows {
                return Err(Error::shape("segment_max mask", &[rows], &[m.len()]));
            }
        }
        let groups = offsets.len() - 1;
        let xv = self.value(x).data();
        let mut out = vec![0.0; groups * d];
        let mut argmax = vec![NO_ROW; groups * d];
        for g in 0..groups {
            for r in offsets[g]..offsets[g + 1] {
                if mask.is_some_and(|m| !m[r]) {
                    continue;
                }
                for j in 0..d {
                    let v = xv[r * d + j];
                    let k = g * d + j;
                    if argmax[k] == NO_ROW || v > out[k] {
                        out[k] = v;
                        argmax[k] = r;
                    }
                }
            }
        }
        let value = Tensor::new(vec![groups, d], out)?;
        self.push(value, Op::SegmentMax { x, argmax }, "segment_max")
    }

    /// Max over the unmasked rows of `x` (`[n × d]`), giving `[d]`.
    pub fn set_max_pool(&mut self, x: NodeId, mask: &[bool]) -> Result<NodeId> {
        if !mask.iter().any(|&m| m) {
            return Err(Error::EmptySet("set_max_pool"));
        }
        let rows = self.value(x).rows();
        let pooled = self.segment_max(x, &[0, rows], Some(mask))?;
        let d = self.value(x).cols();
        self.reshape(pooled, &[d])
    }

    /// Softmax along the last axis.
    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let cols = self.value(x).cols();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(cols.max(1)) {
            softmax_in_place(row);
        }
        let value = Tensor::new(self.shape(x).to_vec(), data)?;
        self.push(value, Op::SoftmaxRows { x, cols }, "softmax")
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        self.softmax_rows(x)
    }

    /// Softmax of a flat score vector within each segment.
    pub fn segment_softmax(&mut self, x: NodeId, offsets: &[usize]) -> Result<NodeId> {
        let n = self.value(x).len();
        check_offsets("segment_softmax", offsets, n)?;
        let mut data = self.value(x).data().to_vec();
        for w in offsets.windows(2) {
            softmax_in_place(&mut data[w[0]..w[1]]);
        }
        let value = Tensor::new(self.shape(x).to_vec(), data)?;
        let op = Op::SegmentSoftmax {
            x,
            offsets: offsets.to_vec(),
        };
        self.push(value, op, "segment_softmax")
    }

    /// `out[g] = Σ_{r in segment g} weights[r] · values[r]`.
    pub fn segment_weighted_sum(
        &mut self,
        values: NodeId,
        weights: NodeId,
        offsets: &[usize],
    ) -> Result<NodeId> {
        let rows = self.value(values).rows();
        let d = self.value(values).cols();
        if self.value(weights).len() != rows {
            return Err(Error::shape(
                "segment_weighted_sum",
                self.shape(values),
                self.shape(weights),
            ));
        }
        check_offsets("segment_weighted_sum", offsets, rows)?;
        let groups = offsets.len() - 1;
        let vv = self.value(values).data();
        let wv = self.value(weights).data();
        let mut out = vec![0.0; groups * d];
        for g in 0..groups {
            let o = &mut out[g * d..(g + 1) * d];
            for r in offsets[g]..offsets[g + 1] {
                for (oj, v) in o.iter_mut().zip(&vv[r * d..(r + 1) * d]) {
                    *oj += wv[r] * v;
                }
            }
        }
        let value = Tensor::new(vec![groups, d], out)?;
        let op = Op::SegmentWeightedSum {
            values,
            weights,
            offsets: offsets.to_vec(),
        };
        self.push(value, op, "segment_weighted_sum")
    }

    /// `Σ_i weights[i] · values[i]` for `values: [n × d]`, `weights: [n]`.
    pub fn weighted_sum(&mut self, values: NodeId, weights: NodeId) -> Result<NodeId> {
        let rows = self.value(values).rows();
        let d = self.value(values).cols();
        let out = self.segment_weighted_sum(values, weights, &[0, rows])?;
        self.reshape(out, &[d])
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", &sa, &sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = av[i * k + p];
                for (o, bpj) in out[i * n..(i + 1) * n].iter_mut().zip(&bv[p * n..(p + 1) * n]) {
                    *o += aip * bpj;
                }
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        self.push(value, Op::MatMul(a, b), "matmul")
    }

    /// Selects (possibly repeated) entries along axis 0.
    pub fn gather(&mut self, x: NodeId, index: &[usize]) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if s.is_empty() {
            return Err(Error::invalid("gather on a rank-0 tensor"));
        }
        let inner: usize = s[1..].iter().product();
        if let Some(&bad) = index.iter().find(|&&i| i >= s[0]) {
            return Err(Error::invalid(format!("gather index {bad} out of {}", s[0])));
        }
        let xv = self.value(x).data();
        let mut data = Vec::with_capacity(index.len() * inner);
        for &i in index {
            data.extend_from_slice(&xv[i * inner..(i + 1) * inner]);
        }
        let mut shape = s;
        shape[0] = index.len();
        let op = Op::Gather {
            x,
            index: index.to_vec(),
        };
        self.push(Tensor::new(shape, data)?, op, "gather")
    }

    /// Length-preserving 1-D convolution along the last axis.
    ///
    /// `x` is `[C_in × T]` or `[B × C_in × T]`, `k` is `[C_out × C_in × K]`
    /// with odd `K`, zero padding `(K − 1) / 2` on both ends.
    pub fn temporal_conv(&mut self, x: NodeId, k: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        let ks = self.shape(k).to_vec();
        let (batch, cin, t) = match xs.len() {
            2 => (1, xs[0], xs[1]),
            3 => (xs[0], xs[1], xs[2]),
            _ => return Err(Error::shape("temporal_conv", &xs, &ks)),
        };
        if ks.len() != 3 || ks[1] != cin || t == 0 {
            return Err(Error::shape("temporal_conv", &xs, &ks));
        }
        let (cout, kw) = (ks[0], ks[2]);
        if kw % 2 == 0 {
            return Err(Error::invalid(format!(
                "temporal_conv kernel width {kw} must be odd"
            )));
        }
        if let Some(b) = b {
            if self.value(b).len() != cout {
                return Err(Error::shape("temporal_conv bias", &ks, self.shape(b)));
            }
        }
        let pad = kw / 2;
        let xv = self.value(x).data();
        let kv = self.value(k).data();
        let bv = b.map(|b| self.value(b).data());
        let mut out = vec![0.0; batch * cout * t];
        for bi in 0..batch {
            let xb = &xv[bi * cin * t..(bi + 1) * cin * t];
            for o in 0..cout {
                let row = &mut out[(bi * cout + o) * t..(bi * cout + o + 1) * t];
                if let Some(bv) = bv {
                    row.fill(bv[o]);
                }
                for c in 0..cin {
                    let xc = &xb[c * t..(c + 1) * t];
                    let kc = &kv[(o * cin + c) * kw..(o * cin + c + 1) * kw];
                    // input s feeds outputs s + pad − j
                    for (s, &xs) in xc.iter().enumerate() {
                        if xs == 0.0 {
                            continue;
                        }
                        let j_lo = (s + pad + 1).saturating_sub(t);
                        let j_hi = (s + pad + 1).min(kw);
                        for j in j_lo..j_hi {
                            row[s + pad - j] += kc[j] * xs;
                        }
                    }
                }
            }
        }
        let mut shape = xs;
        let rank = shape.len();
        shape[rank - 2] = cout;
        let value = Tensor::new(shape, out)?;
        self.push(value, Op::TemporalConv { x, k, b }, "temporal_conv")
    }

    /// One LSTM step for a batch of rows. Returns the packed `[n × 2H]`
    /// state `[h' | c']`; see [`Graph::lstm_cell`] for the split form.
    pub fn lstm_state(
        &mut self,
        x: NodeId,
        h: NodeId,
        c: NodeId,
        w: NodeId,
        b: NodeId,
    ) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        let hs = self.shape(h).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 2 || hs.len() != 2 || xs[0] != hs[0] || self.shape(c) != hs.as_slice() {
            return Err(Error::shape("lstm_cell", &xs, &hs));
        }
        let (n, din, hd) = (xs[0], xs[1], hs[1]);
        if ws != [din + hd, 4 * hd] || self.value(b).len() != 4 * hd {
            return Err(Error::shape("lstm_cell weights", &ws, &[din + hd, 4 * hd]));
        }
        let xv = self.value(x).data();
        let hv = self.value(h).data();
        let cv = self.value(c).data();
        let wv = self.value(w).data();
        let bv = self.value(b).data();
        let g4 = 4 * hd;
        let mut gates = vec![0.0; n * g4];
        let mut tanh_c = vec![0.0; n * hd];
        let mut out = vec![0.0; n * 2 * hd];
        for r in 0..n {
            let pre = &mut gates[r * g4..(r + 1) * g4];
            pre.copy_from_slice(bv);
            let inputs = xv[r * din..(r + 1) * din]
                .iter()
                .chain(&hv[r * hd..(r + 1) * hd]);
            for (i, &v) in inputs.enumerate() {
                if v == 0.0 {
                    continue;
                }
                for (p, wij) in pre.iter_mut().zip(&wv[i * g4..(i + 1) * g4]) {
                    *p += v * wij;
                }
            }
            for j in 0..hd {
                let ig = sigmoid(pre[j]);
                let fg = sigmoid(pre[hd + j]);
                let gg = pre[2 * hd + j].tanh();
                let og = sigmoid(pre[3 * hd + j]);
                pre[j] = ig;
                pre[hd + j] = fg;
                pre[2 * hd + j] = gg;
                pre[3 * hd + j] = og;
                let cn = fg * cv[r * hd + j] + ig * gg;
                let tc = cn.tanh();
                tanh_c[r * hd + j] = tc;
                out[r * 2 * hd + j] = og * tc;
                out[r * 2 * hd + hd + j] = cn;
            }
        }
        let value = Tensor::new(vec![n, 2 * hd], out)?;
        let op = Op::LstmCell {
            x,
            h,
            c,
            w,
            b,
            gates,
            tanh_c,
        };
        self.push(value, op, "lstm_cell")
    }

    /// Standard LSTM cell (gate order input, forget, candidate, output).
    /// `w` is `[(d_in + H) × 4H]`, `b` is `[4H]`.
    pub fn lstm_cell(
        &mut self,
        x: NodeId,
        h: NodeId,
        c: NodeId,
        w: NodeId,
        b: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let hd = self.value(h).cols();
        let state = self.lstm_state(x, h, c, w, b)?;
        let h2 = self.slice(state, 1, 0, hd)?;
        let c2 = self.slice(state, 1, hd, hd)?;
        Ok((h2, c2))
    }

    /// Maps raw `[.. × 5]` outputs to `(μx, μy, σx, σy, ρ)` with
    /// `σ = exp(raw)` and `ρ = tanh(raw)`.
    pub fn gaussian_head(&mut self, x: NodeId) -> Result<NodeId> {
        if self.value(x).cols() != 5 {
            return Err(Error::shape("gaussian_head", self.shape(x), &[5]));
        }
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(5) {
            row[2] = row[2].exp();
            row[3] = row[3].exp();
            row[4] = row[4].tanh();
        }
        let value = Tensor::new(self.shape(x).to_vec(), data)?;
        self.push(value, Op::GaussianHead(x), "gaussian_head")
    }

    /// Mean bivariate-Gaussian negative log density of `target` (`[N × 2]`
    /// flattened) under head outputs `x` (`[.. × 5]`, N rows), over rows with
    /// a true `mask`. Zero when every row is masked.
    pub fn bivariate_nll(&mut self, x: NodeId, target: &[f64], mask: &[bool]) -> Result<NodeId> {
        let rows = self.value(x).rows();
        if self.value(x).cols() != 5 || target.len() != 2 * rows || mask.len() != rows {
            return Err(Error::shape(
                "bivariate_nll",
                self.shape(x),
                &[target.len() / 2, 2],
            ));
        }
        let count = mask.iter().filter(|&&m| m).count();
        let xv = self.value(x).data();
        let mut total = 0.0;
        for r in (0..rows).filter(|&r| mask[r]) {
            let p = &xv[r * 5..r * 5 + 5];
            total += bivariate_nll_term(p, target[2 * r], target[2 * r + 1]);
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        let op = Op::BivariateNll {
            x,
            target: target.to_vec(),
            mask: mask.to_vec(),
        };
        self.push(Tensor::scalar(loss), op, "bivariate_nll")
    }

    /// `Σ_i x_i · weights_i` with constant weights.
    pub fn dot_const(&mut self, x: NodeId, weights: &[f64]) -> Result<NodeId> {
        if self.value(x).len() != weights.len() {
            return Err(Error::shape("dot_const", self.shape(x), &[weights.len()]));
        }
        let v = self
            .value(x)
            .data()
            .iter()
            .zip(weights)
            .map(|(a, b)| a * b)
            .sum();
        let op = Op::Dot {
            x,
            weights: weights.to_vec(),
        };
        self.push(Tensor::scalar(v), op, "dot")
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(v), Op::Sum(x), "sum")
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(Error::EmptySet("mean"));
        }
        let v = self.value(x).data().iter().sum::<f64>() / n as f64;
        self.push(Tensor::scalar(v), Op::Mean(x), "mean")
    }

    /// Reverse sweep from a scalar node. Gradients accumulate, so call once
    /// per graph.
    pub fn backward(&mut self, out: NodeId) -> Result<()> {
        if self.value(out).len() != 1 {
            return Err(Error::shape("backward", self.shape(out), &[1]));
        }
        self.grads[out.0] = Some(vec![1.0]);
        for i in (0..=out.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            backprop(&self.values, &mut self.grads, &self.ops[i], &self.values[i], &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }
}

fn check_offsets(op: &'static str, offsets: &[usize], rows: usize) -> Result<()> {
    let ok = offsets.first() == Some(&0)
        && offsets.last() == Some(&rows)
        && offsets.windows(2).all(|w| w[0] <= w[1]);
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "{op}: offsets {offsets:?} do not partition {rows} rows"
        )))
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let Some(max) = row.iter().copied().reduce(f64::max) else {
        return;
    };
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Negative log density of `(tx, ty)` under `p = (μx, μy, σx, σy, ρ)`.
pub(crate) fn bivariate_nll_term(p: &[f64], tx: f64, ty: f64) -> f64 {
    let (a, b) = ((tx - p[0]) / p[2], (ty - p[1]) / p[3]);
    let rho = p[4];
    let q = 1.0 - rho * rho;
    let z = a * a + b * b - 2.0 * rho * a * b;
    (2.0 * std::f64::consts::PI).ln() + p[2].ln() + p[3].ln() + 0.5 * q.ln() + z / (2.0 * q)
}

fn bivariate_nll_grad(p: &[f64], tx: f64, ty: f64) -> [f64; 5] {
    let (sx, sy, rho) = (p[2], p[3], p[4]);
    let (a, b) = ((tx - p[0]) / sx, (ty - p[1]) / sy);
    let q = 1.0 - rho * rho;
    let z = a * a + b * b - 2.0 * rho * a * b;
    let da = (a - rho * b) / q;
    let db = (b - rho * a) / q;
    [
        -da / sx,
        -db / sy,
        1.0 / sx - a * da / sx,
        1.0 / sy - b * db / sy,
        -rho / q - a * b / q + z * rho / (q * q),
    ]
}

fn backprop(
    values: &[Tensor],
    grads: &mut [Option<Vec<f64>>],
    op: &Op,
    value: &Tensor,
    g: &[f64],
) {
    match op {
        Op::Leaf | Op::Param => {}
        Op::Linear { x, w, b } => {
            let din = values[w.0].shape()[0];
            let dout = values[w.0].shape()[1];
            let rows = value.rows();
            let xv = values[x.0].data();
            let wv = values[w.0].data();
            {
                let dx = grad_of(grads, values, *x);
                for r in 0..rows {
                    let gr = &g[r * dout..(r + 1) * dout];
                    for i in 0..din {
                        dx[r * din + i] += gr
                            .iter()
                            .zip(&wv[i * dout..(i + 1) * dout])
                            .map(|(a, b)| a * b)
                            .sum::<f64>();
                    }
                }
            }
            {
                let dw = grad_of(grads, values, *w);
                for r in 0..rows {
                    let gr = &g[r * dout..(r + 1) * dout];
                    for i in 0..din {
                        let xi = xv[r * din + i];
                        if xi == 0.0 {
                            continue;
                        }
                        for (d, gj) in dw[i * dout..(i + 1) * dout].iter_mut().zip(gr) {
                            *d += xi * gj;
                        }
                    }
                }
            }
            if let Some(b) = b {
                let db = grad_of(grads, values, *b);
                for gr in g.chunks(dout) {
                    for (d, gj) in db.iter_mut().zip(gr) {
                        *d += gj;
                    }
                }
            }
        }
        Op::Add(a, b) => {
            add_into(grad_of(grads, values, *a), g);
            add_into(grad_of(grads, values, *b), g);
        }
        Op::Sub(a, b) => {
            add_into(grad_of(grads, values, *a), g);
            for (d, gi) in grad_of(grads, values, *b).iter_mut().zip(g) {
                *d -= gi;
            }
        }
        Op::Mul(a, b) => {
            let av = values[a.0].data();
            let bv = values[b.0].data();
            for ((d, gi), bi) in grad_of(grads, values, *a).iter_mut().zip(g).zip(bv) {
                *d += gi * bi;
            }
            for ((d, gi), ai) in grad_of(grads, values, *b).iter_mut().zip(g).zip(av) {
                *d += gi * ai;
            }
        }
        Op::RowScale { x, s } => {
            let cols = value.cols();
            let xv = values[x.0].data();
            let sv = values[s.0].data();
            for (i, (d, gi)) in grad_of(grads, values, *x).iter_mut().zip(g).enumerate() {
                *d += gi * sv[i / cols];
            }
            let ds = grad_of(grads, values, *s);
            for (i, (gi, xi)) in g.iter().zip(xv).enumerate() {
                ds[i / cols] += gi * xi;
            }
        }
        Op::Relu(x) => {
            let xv = values[x.0].data();
            for ((d, gi), xi) in grad_of(grads, values, *x).iter_mut().zip(g).zip(xv) {
                if *xi > 0.0 {
                    *d += gi;
                }
            }
        }
        Op::Tanh(x) => {
            for ((d, gi), y) in grad_of(grads, values, *x).iter_mut().zip(g).zip(value.data()) {
                *d += gi * (1.0 - y * y);
            }
        }
        Op::Sigmoid(x) => {
            for ((d, gi), y) in grad_of(grads, values, *x).iter_mut().zip(g).zip(value.data()) {
                *d += gi * y * (1.0 - y);
            }
        }
        Op::Exp(x) => {
            for ((d, gi), y) in grad_of(grads, values, *x).iter_mut().zip(g).zip(value.data()) {
                *d += gi * y;
            }
        }
        Op::Concat {
            inputs,
            outer,
            blocks,
        } => {
            let total: usize = blocks.iter().sum();
            let mut start = 0;
            for (id, &blk) in inputs.iter().zip(blocks) {
                let d = grad_of(grads, values, *id);
                for o in 0..*outer {
                    add_into(
                        &mut d[o * blk..(o + 1) * blk],
                        &g[o * total + start..o * total + start + blk],
                    );
                }
                start += blk;
            }
        }
        Op::Slice {
            x,
            outer,
            in_block,
            offset,
            out_block,
        } => {
            let d = grad_of(grads, values, *x);
            for o in 0..*outer {
                let base = o * in_block + offset;
                add_into(
                    &mut d[base..base + out_block],
                    &g[o * out_block..(o + 1) * out_block],
                );
            }
        }
        Op::Reshape(x) => add_into(grad_of(grads, values, *x), g),
        Op::Permute { x, source } => {
            let d = grad_of(grads, values, *x);
            for (&s, gi) in source.iter().zip(g) {
                d[s] += gi;
            }
        }
        Op::SegmentMax { x, argmax } => {
            let cols = value.cols();
            let d = grad_of(grads, values, *x);
            for (k, (&r, gi)) in argmax.iter().zip(g).enumerate() {
                if r != NO_ROW {
                    d[r * cols + k % cols] += gi;
                }
            }
        }
        Op::SoftmaxRows { x, cols } => {
            let d = grad_of(grads, values, *x);
            let cols = (*cols).max(1);
            for ((dr, gr), yr) in d
                .chunks_mut(cols)
                .zip(g.chunks(cols))
                .zip(value.data().chunks(cols))
            {
                softmax_backward(dr, gr, yr);
            }
        }
        Op::SegmentSoftmax { x, offsets } => {
            let d = grad_of(grads, values, *x);
            for w in offsets.windows(2) {
                let (lo, hi) = (w[0], w[1]);
                softmax_backward(&mut d[lo..hi], &g[lo..hi], &value.data()[lo..hi]);
            }
        }
        Op::SegmentWeightedSum {
            values: vals,
            weights,
            offsets,
        } => {
            let cols = value.cols();
            let vv = values[vals.0].data();
            let wv = values[weights.0].data();
            {
                let dv = grad_of(grads, values, *vals);
                for (grp, w) in offsets.windows(2).enumerate() {
                    let gg = &g[grp * cols..(grp + 1) * cols];
                    for r in w[0]..w[1] {
                        for (d, gj) in dv[r * cols..(r + 1) * cols].iter_mut().zip(gg) {
                            *d += wv[r] * gj;
                        }
                    }
                }
            }
            let dw = grad_of(grads, values, *weights);
            for (grp, w) in offsets.windows(2).enumerate() {
                let gg = &g[grp * cols..(grp + 1) * cols];
                for r in w[0]..w[1] {
                    dw[r] += gg
                        .iter()
                        .zip(&vv[r * cols..(r + 1) * cols])
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
                }
            }
        }
        Op::MatMul(a, b) => {
            let (m, k) = (values[a.0].shape()[0], values[a.0].shape()[1]);
            let n = values[b.0].shape()[1];
            let av = values[a.0].data();
            let bv = values[b.0].data();
            {
                let da = grad_of(grads, values, *a);
                for i in 0..m {
                    for p in 0..k {
                        da[i * k + p] += g[i * n..(i + 1) * n]
                            .iter()
                            .zip(&bv[p * n..(p + 1) * n])
                            .map(|(x, y)| x * y)
                            .sum::<f64>();
                    }
                }
            }
            let db = grad_of(grads, values, *b);
            for i in 0..m {
                for p in 0..k {
                    let aip = av[i * k + p];
                    for (d, gj) in db[p * n..(p + 1) * n].iter_mut().zip(&g[i * n..(i + 1) * n]) {
                        *d += aip * gj;
                    }
                }
            }
        }
        Op::Gather { x, index } => {
            let inner = if index.is_empty() { 0 } else { g.len() / index.len() };
            let d = grad_of(grads, values, *x);
            for (o, &i) in index.iter().enumerate() {
                add_into(&mut d[i * inner..(i + 1) * inner], &g[o * inner..(o + 1) * inner]);
            }
        }
        Op::TemporalConv { x, k, b } => {
            let ks = values[k.0].shape().to_vec();
            let (cout, cin, kw) = (ks[0], ks[1], ks[2]);
            let t = *values[x.0].shape().last().unwrap();
            let batch = values[x.0].data().len() / (cin * t);
            let pad = kw / 2;
            let xv = values[x.0].data();
            let kv = values[k.0].data();
            {
                let dx = grad_of(grads, values, *x);
                for bi in 0..batch {
                    for o in 0..cout {
                        let go = &g[(bi * cout + o) * t..(bi * cout + o + 1) * t];
                        for c in 0..cin {
                            let dxc = &mut dx[(bi * cin + c) * t..(bi * cin + c + 1) * t];
                            let kc = &kv[(o * cin + c) * kw..(o * cin + c + 1) * kw];
                            for (j, &kj) in kc.iter().enumerate() {
                                let lo = pad.saturating_sub(j);
                                let hi = (t + pad).saturating_sub(j).min(t);
                                for tt in lo..hi {
                                    dxc[tt + j - pad] += kj * go[tt];
                                }
                            }
                        }
                    }
                }
            }
            {
                let dk = grad_of(grads, values, *k);
                for bi in 0..batch {
                    for o in 0..cout {
                        let go = &g[(bi * cout + o) * t..(bi * cout + o + 1) * t];
                        for c in 0..cin {
                            let xc = &xv[(bi * cin + c) * t..(bi * cin + c + 1) * t];
                            for j in 0..kw {
                                let lo = pad.saturating_sub(j);
                                let hi = (t + pad).saturating_sub(j).min(t);
                                let mut acc = 0.0;
                                for tt in lo..hi {
                                    acc += go[tt] * xc[tt + j - pad];
                                }
                                dk[(o * cin + c) * kw + j] += acc;
                            }
                        }
                    }
                }
            }
            if let Some(b) = b {
                let db = grad_of(grads, values, *b);
                for bi in 0..batch {
                    for (o, d) in db.iter_mut().enumerate() {
                        *d += g[(bi * cout + o) * t..(bi * cout + o + 1) * t]
                            .iter()
                            .sum::<f64>();
                    }
                }
            }
        }
        Op::LstmCell {
            x,
            h,
            c,
            w,
            b,
            gates,
            tanh_c,
        } => {
            let n = values[x.0].shape()[0];
            let din = values[x.0].shape()[1];
            let hd = values[h.0].shape()[1];
            let g4 = 4 * hd;
            let cv = values[c.0].data();
            let mut dpre = vec![0.0; n * g4];
            let mut dc_prev = vec![0.0; n * hd];
            for r in 0..n {
                let gr = &gates[r * g4..(r + 1) * g4];
                for j in 0..hd {
                    let (ig, fg, gg, og) = (gr[j], gr[hd + j], gr[2 * hd + j], gr[3 * hd + j]);
                    let tc = tanh_c[r * hd + j];
                    let dh = g[r * 2 * hd + j];
                    let dc = g[r * 2 * hd + hd + j] + dh * og * (1.0 - tc * tc);
                    let dp = &mut dpre[r * g4..(r + 1) * g4];
                    dp[j] = dc * gg * ig * (1.0 - ig);
                    dp[hd + j] = dc * cv[r * hd + j] * fg * (1.0 - fg);
                    dp[2 * hd + j] = dc * ig * (1.0 - gg * gg);
                    dp[3 * hd + j] = dh * tc * og * (1.0 - og);
                    dc_prev[r * hd + j] = dc * fg;
                }
            }
            add_into(grad_of(grads, values, *c), &dc_prev);
            let wv = values[w.0].data();
            let xv = values[x.0].data();
            let hv = values[h.0].data();
            {
                let dx = grad_of(grads, values, *x);
                for r in 0..n {
                    let dp = &dpre[r * g4..(r + 1) * g4];
                    for i in 0..din {
                        dx[r * din + i] += dp
                            .iter()
                            .zip(&wv[i * g4..(i + 1) * g4])
                            .map(|(a, b)| a * b)
                            .sum::<f64>();
                    }
                }
            }
            {
                let dh = grad_of(grads, values, *h);
                for r in 0..n {
                    let dp = &dpre[r * g4..(r + 1) * g4];
                    for i in 0..hd {
                        let wi = din + i;
                        dh[r * hd + i] += dp
                            .iter()
                            .zip(&wv[wi * g4..(wi + 1) * g4])
                            .map(|(a, b)| a * b)
                            .sum::<f64>();
                    }
                }
            }
            {
                let dw = grad_of(grads, values, *w);
                for r in 0..n {
                    let dp = &dpre[r * g4..(r + 1) * g4];
                    let inputs = xv[r * din..(r + 1) * din]
                        .iter()
                        .chain(&hv[r * hd..(r + 1) * hd]);
                    for (i, &v) in inputs.enumerate() {
                        if v == 0.0 {
                            continue;
                        }
                        for (d, p) in dw[i * g4..(i + 1) * g4].iter_mut().zip(dp) {
                            *d += v * p;
                        }
                    }
                }
            }
            let db = grad_of(grads, values, *b);
            for dp in dpre.chunks(g4) {
                add_into(db, dp);
            }
        }
        Op::GaussianHead(x) => {
            let d = grad_of(grads, values, *x);
            for ((dr, gr), yr) in d.chunks_mut(5).zip(g.chunks(5)).zip(value.data().chunks(5)) {
                dr[0] += gr[0];
                dr[1] += gr[1];
                dr[2] += gr[2] * yr[2];
                dr[3] += gr[3] * yr[3];
                dr[4] += gr[4] * (1.0 - yr[4] * yr[4]);
            }
        }
        Op::BivariateNll { x, target, mask } => {
            let count = mask.iter().filter(|&&m| m).count();
            if count == 0 {
                return;
            }
            let scale = g[0] / count as f64;
            let xv = values[x.0].data();
            let d = grad_of(grads, values, *x);
            for r in (0..mask.len()).filter(|&r| mask[r]) {
                let gr = bivariate_nll_grad(&xv[r * 5..r * 5 + 5], target[2 * r], target[2 * r + 1]);
                for (dj, gj) in d[r * 5..r * 5 + 5].iter_mut().zip(gr) {
                    *dj += scale * gj;
                }
            }
        }
        Op::Dot { x, weights } => {
            for (d, w) in grad_of(grads, values, *x).iter_mut().zip(weights) {
                *d += g[0] * w;
            }
        }
        Op::Sum(x) => {
            for d in grad_of(grads, values, *x).iter_mut() {
                *d += g[0];
            }
        }
        Op::Mean(x) => {
            let d = grad_of(grads, values, *x);
            let s = g[0] / d.len() as f64;
            for v in d.iter_mut() {
                *v += s;
            }
        }
    }
}

fn softmax_backward(d: &mut [f64], g: &[f64], y: &[f64]) {
    let dot: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
    for ((di, gi), yi) in d.iter_mut().zip(g).zip(y) {
        *di += yi * (gi - dot);
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
