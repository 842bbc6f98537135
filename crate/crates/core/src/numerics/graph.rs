//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation of one forward pass in execution
//! order. [`Graph::backward`] walks the tape in reverse and returns the
//! gradients of all parameter leaves; nothing is retained between steps, the
//! graph is simply dropped.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU32, Ordering};

use super::kernels::{self, ConvGeom};
use super::params::{ParamId, ParamStore};
use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};

static NEXT_GRAPH: AtomicU32 = AtomicU32::new(1);

/// Handle to a recorded value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    idx: usize,
    graph: u32,
}

/// Contiguous run of rows forming one sequence in a packed batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
}

impl Segment {
    pub fn new(start: usize, len: usize) -> Self {
        Self { start, len }
    }

    pub fn range(&self) -> core::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

/// Gradients of parameter leaves, keyed by (store tag, parameter id).
#[derive(Debug, Clone, Default)]
pub struct Gradients<S> {
    entries: Vec<(u32, ParamId, Tensor<S>)>,
}

impl<S: Scalar> Gradients<S> {
    pub(crate) fn entries(&self) -> impl Iterator<Item = (u32, ParamId, &Tensor<S>)> {
        self.entries.iter().map(|(t, id, g)| (*t, *id, g))
    }

    /// Summed gradient of one parameter of `store`, if it was reachable.
    pub fn get(&self, store: &ParamStore<S>, id: ParamId) -> Option<Tensor<S>> {
        let mut out: Option<Tensor<S>> = None;
        for (tag, pid, g) in self.entries() {
            if tag == store.tag() && pid == id {
                match &mut out {
                    Some(acc) => acc.add_assign(g),
                    None => out = Some(g.clone()),
                }
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

enum Op<S> {
    Const,
    Param { store: u32, id: ParamId },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, S),
    AddRow(usize, usize),
    MatMul(usize, usize),
    Transpose(usize),
    Reshape(usize),
    Relu(usize),
    Gelu(usize),
    Sigmoid(usize),
    Tanh(usize),
    SoftmaxRows(usize),
    LayerNorm { x: usize, gamma: usize, beta: usize, xhat: Vec<S>, inv_std: Vec<S> },
    Conv2d { x: usize, w: usize, b: usize, geom: ConvGeom },
    GlobalAvgPool(usize),
    SumAll(usize),
    MeanAll(usize),
    SegmentMean { x: usize, segments: Vec<Segment> },
    Mse(usize, usize),
    WeightedSqErr { a: usize, b: usize, weights: Vec<S> },
    BceWithLogits { logits: usize, targets: Vec<S>, weights: Vec<S> },
    Attention { q: usize, k: usize, v: usize, segments: Vec<Segment>, heads: usize, probs: Vec<S> },
    GatherRows { x: usize, idx: Vec<usize> },
    ConcatRows(usize, usize),
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    needs_grad: bool,
}

/// Recording of one forward computation.
pub struct Graph<S> {
    id: u32,
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;
const LN_EPS: f64 = 1e-5;

fn shape_err<T>(msg: alloc::string::String) -> Result<T> {
    Err(Error::Shape(msg))
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self { id: NEXT_GRAPH.fetch_add(1, Ordering::Relaxed), nodes: Vec::new() }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.graph != self.id || v.idx >= self.nodes.len() {
            return Err(Error::ForeignVar);
        }
        Ok(v.idx)
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var { idx: self.nodes.len() - 1, graph: self.id }
    }

    fn ng(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    fn val(&self, i: usize) -> &Tensor<S> {
        &self.nodes[i].value
    }

    pub fn value(&self, v: Var) -> Result<&Tensor<S>> {
        Ok(self.val(self.idx(v)?))
    }

    pub fn shape(&self, v: Var) -> Result<&[usize]> {
        Ok(self.val(self.idx(v)?).shape())
    }

    /// Records an input that receives no gradient.
    pub fn constant(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Const, false)
    }

    /// Records a parameter leaf (copies its current value).
    pub fn param(&mut self, store: &ParamStore<S>, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param { store: store.tag(), id }, true)
    }

    fn binary_same(&mut self, a: Var, b: Var, name: &str) -> Result<(usize, usize)> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        if self.val(ia).shape() != self.val(ib).shape() {
            return shape_err(format!("{name}: {:?} vs {:?}", self.val(ia).shape(), self.val(ib).shape()));
        }
        Ok((ia, ib))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = self.binary_same(a, b, "add")?;
        let mut out = self.val(ia).clone();
        out.add_assign(self.val(ib));
        let ng = self.ng(ia) || self.ng(ib);
        Ok(self.push(out, Op::Add(ia, ib), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = self.binary_same(a, b, "sub")?;
        let data = self.val(ia).data().iter().zip(self.val(ib).data()).map(|(&x, &y)| x - y).collect();
        let out = Tensor::from_parts(self.val(ia).shape().to_vec(), data);
        let ng = self.ng(ia) || self.ng(ib);
        Ok(self.push(out, Op::Sub(ia, ib), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = self.binary_same(a, b, "mul")?;
        let data = self.val(ia).data().iter().zip(self.val(ib).data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::from_parts(self.val(ia).shape().to_vec(), data);
        let ng = self.ng(ia) || self.ng(ib);
        Ok(self.push(out, Op::Mul(ia, ib), ng))
    }

    pub fn scale(&mut self, a: Var, c: S) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = self.val(ia).map(|x| x * c);
        let ng = self.ng(ia);
        Ok(self.push(out, Op::Scale(ia, c), ng))
    }

    /// `a[.., d] + b[d]`, broadcasting `b` over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let d = self.val(ia).cols();
        if self.val(ib).len() != d {
            return shape_err(format!("add_row: {:?} + {:?}", self.val(ia).shape(), self.val(ib).shape()));
        }
        let mut out = self.val(ia).clone();
        let bias = self.val(ib).data();
        for row in out.data_mut().chunks_mut(d) {
            for (x, &bv) in row.iter_mut().zip(bias) {
                *x += bv;
            }
        }
        let ng = self.ng(ia) || self.ng(ib);
        Ok(self.push(out, Op::AddRow(ia, ib), ng))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (sa, sb) = (self.val(ia).shape(), self.val(ib).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return shape_err(format!("matmul: {sa:?} @ {sb:?}"));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![S::zero(); m * n];
        kernels::matmul_acc(self.val(ia).data(), self.val(ib).data(), &mut out, m, k, n);
        let ng = self.ng(ia) || self.ng(ib);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(ia, ib), ng))
    }

    /// `x[n, in] @ w[in, out] + b[out]`
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let s = self.val(ia).shape();
        if s.len() != 2 {
            return shape_err(format!("transpose needs 2-D, got {s:?}"));
        }
        let (r, c) = (s[0], s[1]);
        let data = kernels::transpose(self.val(ia).data(), r, c);
        let ng = self.ng(ia);
        Ok(self.push(Tensor::from_parts(vec![c, r], data), Op::Transpose(ia), ng))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = self.val(ia).clone().reshape(shape)?;
        let ng = self.ng(ia);
        Ok(self.push(out, Op::Reshape(ia), ng))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = self.val(ia).map(|x| if x > S::zero() { x } else { S::zero() });
        let ng = self.ng(ia);
        Ok(self.push(out, Op::Relu(ia), ng))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let (c, k) = (S::c(GELU_C), S::c(GELU_A));
        let half = S::c(0.5);
        let out = self.val(ia).map(|x| half * x * (S::one() + (c * (x + k * x * x * x)).tanh()));
        let ng = self.ng(ia);
        Ok(self.push(out, Op::Gelu(ia), ng))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = self.val(ia).map(sigmoid);
        let ng = self.ng(ia);
        Ok(self.push(out, Op::Sigmoid(ia), ng))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = self.val(ia).map(|x| x.tanh());
        let ng = self.ng(ia);
        Ok(self.push(out, Op::Tanh(ia), ng))
    }

    /// Softmax along the last dimension.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let mut out = self.val(ia).clone();
        let d = out.cols();
        for row in out.data_mut().chunks_mut(d) {
            softmax_in_place(row);
        }
        let ng = self.ng(ia);
        Ok(self.push(out, Op::SoftmaxRows(ia), ng))
    }

    /// Layer normalization over the last dimension with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (ix, ig, ib) = (self.idx(x)?, self.idx(gamma)?, self.idx(beta)?);
        let d = self.val(ix).cols();
        if self.val(ig).len() != d || self.val(ib).len() != d {
            return shape_err(format!("layer_norm: width {d} vs affine {:?}", self.val(ig).shape()));
        }
        let rows = self.val(ix).len() / d;
        let mut xhat = vec![S::zero(); rows * d];
        let mut inv_std = vec![S::zero(); rows];
        let mut out = vec![S::zero(); rows * d];
        let dn = S::c(d as f64);
        let (g, b) = (self.val(ig).data(), self.val(ib).data());
        for r in 0..rows {
            let row = &self.val(ix).data()[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<S>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / dn;
            let inv = S::one() / (var + S::c(LN_EPS)).sqrt();
            inv_std[r] = inv;
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let shape = self.val(ix).shape().to_vec();
        let ng = self.ng(ix) || self.ng(ig) || self.ng(ib);
        Ok(self.push(Tensor::from_parts(shape, out), Op::LayerNorm { x: ix, gamma: ig, beta: ib, xhat, inv_std }, ng))
    }

    /// 2-D convolution. `x: [n, c, h, w]`, `w: [o, c, k, k]`, `b: [o]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (ix, iw, ib) = (self.idx(x)?, self.idx(w)?, self.idx(b)?);
        let (sx, sw) = (self.val(ix).shape(), self.val(iw).shape());
        if sx.len() != 4 || sw.len() != 4 || sw[1] != sx[1] || sw[2] != sw[3] {
            return shape_err(format!("conv2d: input {sx:?}, kernel {sw:?}"));
        }
        if self.val(ib).len() != sw[0] {
            return shape_err(format!("conv2d: bias {:?} for {} outputs", self.val(ib).shape(), sw[0]));
        }
        if stride == 0 || sx[2] + 2 * pad < sw[2] || sx[3] + 2 * pad < sw[2] {
            return shape_err(format!("conv2d: kernel {} does not fit {sx:?} with pad {pad}", sw[2]));
        }
        let geom = ConvGeom { n: sx[0], c: sx[1], h: sx[2], w: sx[3], o: sw[0], k: sw[2], stride, pad };
        let cols = kernels::im2col(self.val(ix).data(), &geom);
        let np = geom.positions();
        let mut tmp = vec![S::zero(); geom.o * np];
        kernels::matmul_acc(self.val(iw).data(), &cols, &mut tmp, geom.o, geom.patch_len(), np);
        let (oh, ow) = (geom.out_h(), geom.out_w());
        let p = oh * ow;
        let bias = self.val(ib).data();
        let mut out = vec![S::zero(); geom.n * geom.o * p];
        for o in 0..geom.o {
            for s in 0..geom.n {
                let src = &tmp[o * np + s * p..o * np + (s + 1) * p];
                let dst = &mut out[(s * geom.o + o) * p..(s * geom.o + o + 1) * p];
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d = v + bias[o];
                }
            }
        }
        let ng = self.ng(ix) || self.ng(iw) || self.ng(ib);
        Ok(self.push(
            Tensor::from_parts(vec![geom.n, geom.o, oh, ow], out),
            Op::Conv2d { x: ix, w: iw, b: ib, geom },
            ng,
        ))
    }

    /// `[n, c, h, w] -> [n, c]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let s = self.val(ix).shape();
        if s.len() != 4 {
            return shape_err(format!("global_avg_pool needs 4-D, got {s:?}"));
        }
        let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
        let inv = S::one() / S::c(hw as f64);
        let data = self.val(ix).data().chunks(hw).map(|ch| ch.iter().copied().sum::<S>() * inv).collect();
        let ng = self.ng(ix);
        Ok(self.push(Tensor::from_parts(vec![n, c], data), Op::GlobalAvgPool(ix), ng))
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let s = self.val(ia).sum();
        let ng = self.ng(ia);
        Ok(self.push(Tensor::scalar(s), Op::SumAll(ia), ng))
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let m = self.val(ia).sum() / S::c(self.val(ia).len() as f64);
        let ng = self.ng(ia);
        Ok(self.push(Tensor::scalar(m), Op::MeanAll(ia), ng))
    }

    /// Mean over the rows of each segment: `[t, d] -> [segments, d]`.
    pub fn segment_mean(&mut self, x: Var, segments: &[Segment]) -> Result<Var> {
        let ix = self.idx(x)?;
        let (rows, d) = (self.val(ix).rows(), self.val(ix).cols());
        check_segments(segments, rows)?;
        let mut out = vec![S::zero(); segments.len() * d];
        for (si, seg) in segments.iter().enumerate() {
            let inv = S::one() / S::c(seg.len as f64);
            let dst = &mut out[si * d..(si + 1) * d];
            for r in seg.range() {
                for (o, &v) in dst.iter_mut().zip(self.val(ix).row(r)) {
                    *o += v;
                }
            }
            dst.iter_mut().for_each(|o| *o *= inv);
        }
        let ng = self.ng(ix);
        Ok(self.push(
            Tensor::from_parts(vec![segments.len(), d], out),
            Op::SegmentMean { x: ix, segments: segments.to_vec() },
            ng,
        ))
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = self.binary_same(a, b, "mse")?;
        let n = S::c(self.val(ia).len() as f64);
        let s: S = self.val(ia).data().iter().zip(self.val(ib).data()).map(|(&x, &y)| (x - y) * (x - y)).sum();
        let ng = self.ng(ia) || self.ng(ib);
        Ok(self.push(Tensor::scalar(s / n), Op::Mse(ia, ib), ng))
    }

    /// `sum_r weights[r] * sum_c (a[r,c] - b[r,c])^2`
    pub fn weighted_sq_err(&mut self, a: Var, b: Var, weights: Vec<S>) -> Result<Var> {
        let (ia, ib) = self.binary_same(a, b, "weighted_sq_err")?;
        let rows = self.val(ia).rows();
        if weights.len() != rows {
            return shape_err(format!("weighted_sq_err: {} weights for {rows} rows", weights.len()));
        }
        let mut s = S::zero();
        for (r, &w) in weights.iter().enumerate() {
            let row: S = self.val(ia).row(r).iter().zip(self.val(ib).row(r)).map(|(&x, &y)| (x - y) * (x - y)).sum();
            s += w * row;
        }
        let ng = self.ng(ia) || self.ng(ib);
        Ok(self.push(Tensor::scalar(s), Op::WeightedSqErr { a: ia, b: ib, weights }, ng))
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against 0/1 targets,
    /// computed in the numerically stable logit form.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[S]) -> Result<Var> {
        self.weighted_bce_with_logits(logits, targets, &vec![S::one(); targets.len()])
    }

    /// `sum_i w_i * bce_i / sum_i w_i`.
    pub fn weighted_bce_with_logits(&mut self, logits: Var, targets: &[S], weights: &[S]) -> Result<Var> {
        let il = self.idx(logits)?;
        if self.val(il).len() != targets.len() || weights.len() != targets.len() {
            return shape_err(format!(
                "bce_with_logits: {} logits, {} targets, {} weights",
                self.val(il).len(),
                targets.len(),
                weights.len()
            ));
        }
        let wsum: S = weights.iter().copied().sum();
        if !(wsum > S::zero()) {
            return Err(Error::Contract("bce weights must have a positive sum".into()));
        }
        let s: S = self.val(il).data().iter().zip(targets).zip(weights).map(|((&z, &y), &w)| w * bce_logit(z, y)).sum();
        let ng = self.ng(il);
        let op = Op::BceWithLogits { logits: il, targets: targets.to_vec(), weights: weights.to_vec() };
        Ok(self.push(Tensor::scalar(s / wsum), op, ng))
    }

    /// Multi-head scaled dot-product attention restricted to segments: rows
    /// attend only to rows of their own segment. `q, k, v: [t, d]`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, segments: &[Segment], heads: usize) -> Result<Var> {
        let (iq, ik, iv) = (self.idx(q)?, self.idx(k)?, self.idx(v)?);
        let sq = self.val(iq).shape().to_vec();
        if sq.len() != 2 || self.val(ik).shape() != sq.as_slice() || self.val(iv).shape() != sq.as_slice() {
            return shape_err(format!(
                "attention: q {:?}, k {:?}, v {:?}",
                sq,
                self.val(ik).shape(),
                self.val(iv).shape()
            ));
        }
        let (t, d) = (sq[0], sq[1]);
        if heads == 0 || d % heads != 0 {
            return shape_err(format!("attention: width {d} not divisible by {heads} heads"));
        }
        check_segments(segments, t)?;
        let dh = d / heads;
        let scale = S::one() / S::c(dh as f64).sqrt();
        let (qd, kd, vd) = (self.val(iq).data(), self.val(ik).data(), self.val(iv).data());
        let mut probs = Vec::with_capacity(segments.iter().map(|s| s.len * s.len * heads).sum());
        let mut out = vec![S::zero(); t * d];
        let mut scores = Vec::new();
        for seg in segments {
            for h in 0..heads {
                let off = h * dh;
                for i in seg.range() {
                    let qi = &qd[i * d + off..i * d + off + dh];
                    scores.clear();
                    for j in seg.range() {
                        scores.push(kernels::dot(qi, &kd[j * d + off..j * d + off + dh]) * scale);
                    }
                    softmax_in_place(&mut scores);
                    let oi = &mut out[i * d + off..i * d + off + dh];
                    for (jj, j) in seg.range().enumerate() {
                        let p = scores[jj];
                        for (o, &vv) in oi.iter_mut().zip(&vd[j * d + off..j * d + off + dh]) {
                            *o += p * vv;
                        }
                    }
                    probs.extend_from_slice(&scores);
                }
            }
        }
        let ng = self.ng(iq) || self.ng(ik) || self.ng(iv);
        Ok(self.push(
            Tensor::from_parts(vec![t, d], out),
            Op::Attention { q: iq, k: ik, v: iv, segments: segments.to_vec(), heads, probs },
            ng,
        ))
    }

    /// Selects rows (with repetition allowed) of a matrix.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let ix = self.idx(x)?;
        let (rows, d) = (self.val(ix).rows(), self.val(ix).cols());
        if let Some(&bad) = idx.iter().find(|&&r| r >= rows) {
            return shape_err(format!("gather_rows: row {bad} of {rows}"));
        }
        if idx.is_empty() {
            return Err(Error::Empty("gather_rows with no indices".into()));
        }
        let mut out = Vec::with_capacity(idx.len() * d);
        for &r in idx {
            out.extend_from_slice(self.val(ix).row(r));
        }
        let ng = self.ng(ix);
        Ok(self.push(Tensor::from_parts(vec![idx.len(), d], out), Op::GatherRows { x: ix, idx: idx.to_vec() }, ng))
    }

    /// Stacks the rows of `b` below the rows of `a`.
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (da, db) = (self.val(ia).cols(), self.val(ib).cols());
        if da != db {
            return shape_err(format!("concat_rows: {:?} and {:?}", self.val(ia).shape(), self.val(ib).shape()));
        }
        let mut out = self.val(ia).data().to_vec();
        out.extend_from_slice(self.val(ib).data());
        let rows = self.val(ia).rows() + self.val(ib).rows();
        let ng = self.ng(ia) || self.ng(ib);
        Ok(self.push(Tensor::from_parts(vec![rows, da], out), Op::ConcatRows(ia, ib), ng))
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        let li = self.idx(loss)?;
        if self.val(li).len() != 1 {
            return Err(Error::Contract(format!("backward needs a scalar loss, got shape {:?}", self.val(li).shape())));
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..=li).map(|_| None).collect();
        grads[li] = Some(Tensor::full(self.val(li).shape(), S::one()));
        let mut out = Gradients { entries: Vec::new() };
        for i in (0..=li).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.backprop_node(i, g, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn acc(&self, grads: &mut [Option<Tensor<S>>], i: usize, g: Tensor<S>) {
        if !self.nodes[i].needs_grad {
            return;
        }
        match &mut grads[i] {
            Some(t) => t.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn like(&self, i: usize, data: Vec<S>) -> Tensor<S> {
        Tensor::from_parts(self.val(i).shape().to_vec(), data)
    }

    fn backprop_node(&self, i: usize, g: Tensor<S>, grads: &mut [Option<Tensor<S>>], out: &mut Gradients<S>) {
        let node = &self.nodes[i];
        let gd = g.data();
        match &node.op {
            Op::Const => {}
            Op::Param { store, id } => out.entries.push((*store, *id, g)),
            Op::Add(a, b) => {
                if self.ng(*b) {
                    self.acc(grads, *b, g.clone());
                }
                self.acc(grads, *a, g);
            }
            Op::Sub(a, b) => {
                if self.ng(*b) {
                    self.acc(grads, *b, g.map(|x| -x));
                }
                self.acc(grads, *a, g);
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    let d = gd.iter().zip(self.val(*b).data()).map(|(&x, &y)| x * y).collect();
                    self.acc(grads, *a, self.like(*a, d));
                }
                if self.ng(*b) {
                    let d = gd.iter().zip(self.val(*a).data()).map(|(&x, &y)| x * y).collect();
                    self.acc(grads, *b, self.like(*b, d));
                }
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.acc(grads, *a, g.map(|x| x * c));
            }
            Op::AddRow(a, b) => {
                if self.ng(*b) {
                    let d = self.val(*b).len();
                    let mut gb = vec![S::zero(); d];
                    for row in gd.chunks(d) {
                        for (s, &v) in gb.iter_mut().zip(row) {
                            *s += v;
                        }
                    }
                    self.acc(grads, *b, self.like(*b, gb));
                }
                self.acc(grads, *a, g);
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.val(*a).shape(), self.val(*b).shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.ng(*a) {
                    let bt = kernels::transpose(self.val(*b).data(), k, n);
                    let mut ga = vec![S::zero(); m * k];
                    kernels::matmul_acc(gd, &bt, &mut ga, m, n, k);
                    self.acc(grads, *a, self.like(*a, ga));
                }
                if self.ng(*b) {
                    let mut gb = vec![S::zero(); k * n];
                    kernels::matmul_tn_acc(self.val(*a).data(), gd, &mut gb, m, k, n);
                    self.acc(grads, *b, self.like(*b, gb));
                }
            }
            Op::Transpose(a) => {
                let s = node.value.shape();
                let d = kernels::transpose(gd, s[0], s[1]);
                self.acc(grads, *a, self.like(*a, d));
            }
            Op::Reshape(a) => {
                let d = g.into_data();
                self.acc(grads, *a, self.like(*a, d));
            }
            Op::Relu(a) => {
                let d = gd
                    .iter()
                    .zip(self.val(*a).data())
                    .map(|(&gv, &x)| if x > S::zero() { gv } else { S::zero() })
                    .collect();
                self.acc(grads, *a, self.like(*a, d));
            }
            Op::Gelu(a) => {
                let (c, k) = (S::c(GELU_C), S::c(GELU_A));
                let half = S::c(0.5);
                let three = S::c(3.0);
                let d = gd
                    .iter()
                    .zip(self.val(*a).data())
                    .map(|(&gv, &x)| {
                        let t = (c * (x + k * x * x * x)).tanh();
                        let dt = (S::one() - t * t) * c * (S::one() + three * k * x * x);
                        gv * (half * (S::one() + t) + half * x * dt)
                    })
                    .collect();
                self.acc(grads, *a, self.like(*a, d));
            }
            Op::Sigmoid(a) => {
                let d = gd.iter().zip(node.value.data()).map(|(&gv, &s)| gv * s * (S::one() - s)).collect();
                self.acc(grads, *a, self.like(*a, d));
            }
            Op::Tanh(a) => {
                let d = gd.iter().zip(node.value.data()).map(|(&gv, &y)| gv * (S::one() - y * y)).collect();
                self.acc(grads, *a, self.like(*a, d));
            }
            Op::SoftmaxRows(a) => {
                let dcols = node.value.cols();
                let mut d = vec![S::zero(); gd.len()];
                for ((yr, gr), dr) in node.value.data().chunks(dcols).zip(gd.chunks(dcols)).zip(d.chunks_mut(dcols)) {
                    let dotp: S = yr.iter().zip(gr).map(|(&y, &gv)| y * gv).sum();
                    for ((o, &y), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *o = y * (gv - dotp);
                    }
                }
                self.acc(grads, *a, self.like(*a, d));
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let d = self.val(*gamma).len();
                let gam = self.val(*gamma).data();
                if self.ng(*gamma) || self.ng(*beta) {
                    let mut gg = vec![S::zero(); d];
                    let mut gb = vec![S::zero(); d];
                    for (gr, hr) in gd.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            gg[j] += gr[j] * hr[j];
                            gb[j] += gr[j];
                        }
                    }
                    self.acc(grads, *gamma, self.like(*gamma, gg));
                    self.acc(grads, *beta, self.like(*beta, gb));
                }
                if self.ng(*x) {
                    let dn = S::c(d as f64);
                    let mut gx = vec![S::zero(); gd.len()];
                    for (r, ((gr, hr), out_r)) in gd.chunks(d).zip(xhat.chunks(d)).zip(gx.chunks_mut(d)).enumerate() {
                        let mut s1 = S::zero();
                        let mut s2 = S::zero();
                        for j in 0..d {
                            let gh = gr[j] * gam[j];
                            s1 += gh;
                            s2 += gh * hr[j];
                        }
                        let inv = inv_std[r];
                        for j in 0..d {
                            let gh = gr[j] * gam[j];
                            out_r[j] = inv / dn * (dn * gh - s1 - hr[j] * s2);
                        }
                    }
                    self.acc(grads, *x, self.like(*x, gx));
                }
            }
            Op::Conv2d { x, w, b, geom } => {
                let np = geom.positions();
                let p = geom.out_h() * geom.out_w();
                let mut gtmp = vec![S::zero(); geom.o * np];
                for s in 0..geom.n {
                    for o in 0..geom.o {
                        let src = &gd[(s * geom.o + o) * p..(s * geom.o + o + 1) * p];
                        gtmp[o * np + s * p..o * np + (s + 1) * p].copy_from_slice(src);
                    }
                }
                if self.ng(*b) {
                    let gb = (0..geom.o).map(|o| gtmp[o * np..(o + 1) * np].iter().copied().sum()).collect();
                    self.acc(grads, *b, self.like(*b, gb));
                }
                let need_w = self.ng(*w);
                let need_x = self.ng(*x);
                if need_w || need_x {
                    let pl = geom.patch_len();
                    if need_w {
                        let cols = kernels::im2col(self.val(*x).data(), geom);
                        let mut gw = vec![S::zero(); geom.o * pl];
                        for o in 0..geom.o {
                            let grow = &gtmp[o * np..(o + 1) * np];
                            for q in 0..pl {
                                gw[o * pl + q] = kernels::dot(grow, &cols[q * np..(q + 1) * np]);
                            }
                        }
                        self.acc(grads, *w, self.like(*w, gw));
                    }
                    if need_x {
                        let mut gcols = vec![S::zero(); pl * np];
                        kernels::matmul_tn_acc(self.val(*w).data(), &gtmp, &mut gcols, geom.o, pl, np);
                        let mut gx = vec![S::zero(); self.val(*x).len()];
                        kernels::col2im(&gcols, geom, &mut gx);
                        self.acc(grads, *x, self.like(*x, gx));
                    }
                }
            }
            Op::GlobalAvgPool(a) => {
                let s = self.val(*a).shape();
                let hw = s[2] * s[3];
                let inv = S::one() / S::c(hw as f64);
                let mut d = vec![S::zero(); self.val(*a).len()];
                for (ch, &gv) in d.chunks_mut(hw).zip(gd) {
                    ch.iter_mut().for_each(|o| *o = gv * inv);
                }
                self.acc(grads, *a, self.like(*a, d));
            }
            Op::SumAll(a) => {
                let gv = gd[0];
                self.acc(grads, *a, Tensor::full(self.val(*a).shape(), gv));
            }
            Op::MeanAll(a) => {
                let gv = gd[0] / S::c(self.val(*a).len() as f64);
                self.acc(grads, *a, Tensor::full(self.val(*a).shape(), gv));
            }
            Op::SegmentMean { x, segments } => {
                let d = self.val(*x).cols();
                let mut gx = vec![S::zero(); self.val(*x).len()];
                for (si, seg) in segments.iter().enumerate() {
                    let inv = S::one() / S::c(seg.len as f64);
                    let gr = &gd[si * d..(si + 1) * d];
                    for r in seg.range() {
                        for (o, &gv) in gx[r * d..(r + 1) * d].iter_mut().zip(gr) {
                            *o += gv * inv;
                        }
                    }
                }
                self.acc(grads, *x, self.like(*x, gx));
            }
            Op::Mse(a, b) => {
                let n = S::c(self.val(*a).len() as f64);
                let c = S::c(2.0) * gd[0] / n;
                let diff: Vec<S> =
                    self.val(*a).data().iter().zip(self.val(*b).data()).map(|(&x, &y)| c * (x - y)).collect();
                if self.ng(*b) {
                    self.acc(grads, *b, self.like(*b, diff.iter().map(|&v| -v).collect()));
                }
                self.acc(grads, *a, self.like(*a, diff));
            }
            Op::WeightedSqErr { a, b, weights } => {
                let d = self.val(*a).cols();
                let two = S::c(2.0) * gd[0];
                let (va, vb) = (self.val(*a).data(), self.val(*b).data());
                let mut diff = vec![S::zero(); va.len()];
                for (r, &w) in weights.iter().enumerate() {
                    let span = r * d..(r + 1) * d;
                    for ((o, &x), &y) in diff[span.clone()].iter_mut().zip(&va[span.clone()]).zip(&vb[span]) {
                        *o = two * w * (x - y);
                    }
                }
                if self.ng(*b) {
                    self.acc(grads, *b, self.like(*b, diff.iter().map(|&v| -v).collect()));
                }
                self.acc(grads, *a, self.like(*a, diff));
            }
            Op::BceWithLogits { logits, targets, weights } => {
                let wsum: S = weights.iter().copied().sum();
                let c = gd[0] / wsum;
                let d = self
                    .val(*logits)
                    .data()
                    .iter()
                    .zip(targets)
                    .zip(weights)
                    .map(|((&z, &y), &w)| c * w * (sigmoid(z) - y))
                    .collect();
                self.acc(grads, *logits, self.like(*logits, d));
            }
            Op::Attention { q, k, v, segments, heads, probs } => {
                let d = node.value.cols();
                let dh = d / heads;
                let scale = S::one() / S::c(dh as f64).sqrt();
                let (qd, kd, vd) = (self.val(*q).data(), self.val(*k).data(), self.val(*v).data());
                let mut gq = vec![S::zero(); qd.len()];
                let mut gk = vec![S::zero(); kd.len()];
                let mut gv = vec![S::zero(); vd.len()];
                let mut pos = 0;
                let mut ds = Vec::new();
                for seg in segments {
                    let l = seg.len;
                    for h in 0..*heads {
                        let off = h * dh;
                        for i in seg.range() {
                            let p = &probs[pos..pos + l];
                            pos += l;
                            let go = &gd[i * d + off..i * d + off + dh];
                            ds.clear();
                            for (jj, j) in seg.range().enumerate() {
                                let vj = &vd[j * d + off..j * d + off + dh];
                                ds.push(kernels::dot(go, vj));
                                for (t, &g) in gv[j * d + off..j * d + off + dh].iter_mut().zip(go) {
                                    *t += p[jj] * g;
                                }
                            }
                            let r: S = p.iter().zip(&ds).map(|(&a, &b)| a * b).sum();
                            for (jj, s) in ds.iter_mut().enumerate() {
                                *s = p[jj] * (*s - r) * scale;
                            }
                            let qi_off = i * d + off;
                            for (jj, j) in seg.range().enumerate() {
                                let s = ds[jj];
                                let kj_off = j * d + off;
                                for t in 0..dh {
                                    gq[qi_off + t] += s * kd[kj_off + t];
                                    gk[kj_off + t] += s * qd[qi_off + t];
                                }
                            }
                        }
                    }
                }
                self.acc(grads, *q, self.like(*q, gq));
                self.acc(grads, *k, self.like(*k, gk));
                self.acc(grads, *v, self.like(*v, gv));
            }
            Op::GatherRows { x, idx } => {
                let d = self.val(*x).cols();
                let mut gx = vec![S::zero(); self.val(*x).len()];
                for (o, &r) in idx.iter().enumerate() {
                    for (t, &gv) in gx[r * d..(r + 1) * d].iter_mut().zip(&gd[o * d..(o + 1) * d]) {
                        *t += gv;
                    }
                }
                self.acc(grads, *x, self.like(*x, gx));
            }
            Op::ConcatRows(a, b) => {
                let na = self.val(*a).len();
                if self.ng(*a) {
                    self.acc(grads, *a, self.like(*a, gd[..na].to_vec()));
                }
                if self.ng(*b) {
                    self.acc(grads, *b, self.like(*b, gd[na..].to_vec()));
                }
            }
        }
    }
}

fn check_segments(segments: &[Segment], rows: usize) -> Result<()> {
    for s in segments {
        if s.len == 0 || s.start + s.len > rows {
            return shape_err(format!("segment {s:?} outside {rows} rows"));
        }
    }
    Ok(())
}

pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

fn bce_logit<S: Scalar>(z: S, y: S) -> S {
    z.max(S::zero()) - z * y + (S::one() + (-z.abs()).exp()).ln()
}

pub(crate) fn softmax_in_place<S: Scalar>(row: &mut [S]) {
    let m = row.iter().copied().fold(S::neg_infinity(), S::max);
    let mut s = S::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient_is_analytic() {
        let mut store = ParamStore::<f64>::new();
        let x = store.add("x", Tensor::scalar(3.0));
        let mut g = Graph::new();
        let xv = g.param(&store, x);
        let y = g.mul(xv, xv).unwrap();
        let grads = g.backward(y).unwrap();
        store.accumulate(&grads);
        assert!((store.grad(x).data()[0] - 6.0).abs() < 1e-10);
    }

    #[test]
    fn constant_loss_gives_zero_grads() {
        let mut store = ParamStore::<f64>::new();
        let x = store.add("x", Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap());
        let mut g = Graph::new();
        let _xv = g.param(&store, x);
        let c = g.constant(Tensor::scalar(4.0));
        let loss = g.scale(c, 2.0).unwrap();
        let grads = g.backward(loss).unwrap();
        store.accumulate(&grads);
        assert!(store.grad(x).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut store = ParamStore::<f64>::new();
        let x = store.add("x", Tensor::scalar(2.0));
        for _ in 0..2 {
            let mut g = Graph::new();
            let xv = g.param(&store, x);
            let y = g.mul(xv, xv).unwrap();
            let grads = g.backward(y).unwrap();
            store.accumulate(&grads);
        }
        assert_eq!(store.grad(x).data()[0], 8.0);
        store.zero_grads();
        assert_eq!(store.grad(x).data()[0], 0.0);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::<f64>::new();
        let c = g.constant(Tensor::zeros(&[2]));
        assert!(matches!(g.backward(c), Err(Error::Contract(_))));
    }

    #[test]
    fn foreign_var_is_rejected() {
        let mut g1 = Graph::<f64>::new();
        let mut g2 = Graph::<f64>::new();
        let a = g1.constant(Tensor::scalar(1.0));
        let _b = g2.constant(Tensor::scalar(1.0));
        assert_eq!(g2.relu(a), Err(Error::ForeignVar));
        assert_eq!(g2.backward(a).unwrap_err(), Error::ForeignVar);
    }

    #[test]
    fn gradients_skip_other_stores() {
        let mut a = ParamStore::<f64>::new();
        let pa = a.add("w", Tensor::scalar(2.0));
        let mut b = a.clone();
        let mut g = Graph::new();
        let v = g.param(&a, pa);
        let y = g.mul(v, v).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(b.accumulate(&grads), 0);
        assert_eq!(a.accumulate(&grads), 1);
        assert_eq!(b.grad(pa).data()[0], 0.0);
    }

    #[test]
    fn attention_single_row_segment_copies_value() {
        let mut g = Graph::<f64>::new();
        let q = g.constant(Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let v = g.constant(Tensor::from_vec(&[2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap());
        let segs = [Segment::new(0, 1), Segment::new(1, 1)];
        let o = g.attention(q, q, v, &segs, 2).unwrap();
        assert_eq!(g.value(o).unwrap().data(), &[5.0, 6.0, 7.0, 8.0]);
    }
}
