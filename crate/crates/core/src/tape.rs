//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every operation as a node whose inputs are strictly
//! earlier nodes, so the recording order is already a topological order.
//! [`Tape::backward`] walks it once in reverse, accumulating adjoints.
//!
//! Parameters enter the tape borrowed (`Tape::param`), so binding a model
//! costs nothing and the parameters can be updated as soon as the tape is
//! dropped. The op set is closed: it contains exactly what the tri-plane
//! field, the fusion heads, the decoder, the losses and the image encoder
//! need.

use std::borrow::Cow;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The kind of a recorded node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    MatMul,
    AddBias,
    Conv2d3x3,
    Conv2d1x1,
    Relu,
    SoftmaxLastDim,
    MeanReduce,
    SumReduce,
    Reshape,
    BilinearSample2d,
    ScalarScale,
    Square,
    Log1p,
    Stack,
    Mix,
    TotalVariation,
    ResizeNearest,
    ResizeBilinear,
    Slice,
    ChannelLast,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Conv2d { x: Var, w: Var, b: Option<Var>, stride: usize },
    Relu(Var),
    Softmax(Var),
    MeanAxis { x: Var, axis: usize },
    SumAxis { x: Var, axis: usize },
    MeanAll(Var),
    SumAll(Var),
    Reshape(Var),
    Bilinear { grid: Var, coords: Vec<[f64; 2]> },
    Scale(Var, f64),
    Square(Var),
    Log1p(Var),
    Stack(Vec<Var>),
    Mix { w: Var, f: Var },
    Tv(Var),
    ResizeNearest(Var),
    ResizeBilinear(Var),
    Slice { x: Var, start: usize },
    ChannelLast(Var),
}

impl Op {
    fn kind(&self, tape: &Tape<'_>) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::MatMul(..) => OpKind::MatMul,
            Op::AddBias(..) => OpKind::AddBias,
            Op::Conv2d { w, .. } => {
                if tape.value(*w).shape()[2] == 3 {
                    OpKind::Conv2d3x3
                } else {
                    OpKind::Conv2d1x1
                }
            }
            Op::Relu(_) => OpKind::Relu,
            Op::Softmax(_) => OpKind::SoftmaxLastDim,
            Op::MeanAxis { .. } | Op::MeanAll(_) => OpKind::MeanReduce,
            Op::SumAxis { .. } | Op::SumAll(_) => OpKind::SumReduce,
            Op::Reshape(_) => OpKind::Reshape,
            Op::Bilinear { .. } => OpKind::BilinearSample2d,
            Op::Scale(..) => OpKind::ScalarScale,
            Op::Square(_) => OpKind::Square,
            Op::Log1p(_) => OpKind::Log1p,
            Op::Stack(_) => OpKind::Stack,
            Op::Mix { .. } => OpKind::Mix,
            Op::Tv(_) => OpKind::TotalVariation,
            Op::ResizeNearest(_) => OpKind::ResizeNearest,
            Op::ResizeBilinear(_) => OpKind::ResizeBilinear,
            Op::Slice { .. } => OpKind::Slice,
            Op::ChannelLast(_) => OpKind::ChannelLast,
        }
    }
}

struct Node<'a> {
    op: Op,
    value: Cow<'a, Tensor>,
    requires_grad: bool,
}

pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Grads {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads[var.0].as_ref()
    }

    /// The adjoint of `var`, or zeros of its shape when the root does not
    /// depend on it.
    pub fn wrt(&self, var: Var) -> Tensor {
        self.grads[var.0].clone().unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads[var.0].take()
    }
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Splits `shape` around `axis` into (outer, extent, inner).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Bilinear stencil of a continuous coordinate in `[0, 1]` on an axis with
/// `n >= 2` nodes: the lower node and the weight of the upper node.
#[inline]
pub(crate) fn stencil(u: f64, n: usize) -> (usize, f64) {
    let pos = u.clamp(0.0, 1.0) * (n - 1) as f64;
    let i0 = (pos.floor() as usize).min(n - 2);
    (i0, pos - i0 as f64)
}

fn resize_src(i: usize, from: usize, to: usize) -> f64 {
    if to == 1 {
        0.0
    } else {
        i as f64 * (from - 1) as f64 / (to - 1) as f64
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn kind(&self, var: Var) -> OpKind {
        self.nodes[var.0].op.kind(self)
    }

    /// Kinds of all recorded nodes, in recording order.
    pub fn kinds(&self) -> Vec<OpKind> {
        self.nodes.iter().map(|n| n.op.kind(self)).collect()
    }

    fn push(&mut self, op: Op, value: Tensor, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { op, value: Cow::Owned(value), requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable leaf borrowing an existing parameter tensor.
    pub fn param(&mut self, t: &'a Tensor) -> Var {
        self.nodes.push(Node { op: Op::Leaf, value: Cow::Borrowed(t), requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable leaf that the tape owns.
    pub fn param_owned(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { op: Op::Leaf, value: Cow::Owned(t), requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives no adjoint.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { op: Op::Leaf, value: Cow::Owned(t), requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn constant_ref(&mut self, t: &'a Tensor) -> Var {
        self.nodes.push(Node { op: Op::Leaf, value: Cow::Borrowed(t), requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    fn zip_map(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(op, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_map("add", a, b, |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), v, &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_map("sub", a, b, |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), v, &[a, b]))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_map("mul", a, b, |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), v, &[a, b]))
    }

    /// `[n, k] x [k, m] -> [n, m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (n, k, m) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; n * m];
        matmul_into(ta.data(), tb.data(), &mut out, n, k, m);
        let v = Tensor::new(&[n, m], out)?;
        Ok(self.push(Op::MatMul(a, b), v, &[a, b]))
    }

    /// Adds a bias vector along the last axis.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(b));
        let f = *tx.shape().last().unwrap_or(&1);
        if tb.len() != f || tx.shape().is_empty() {
            return Err(Error::shape("add_bias", format!("{:?} + {:?}", tx.shape(), tb.shape())));
        }
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(f) {
            for (d, bias) in row.iter_mut().zip(tb.data()) {
                *d += bias;
            }
        }
        let v = Tensor::new(tx.shape(), data)?;
        Ok(self.push(Op::AddBias(x, b), v, &[x, b]))
    }

    /// 2-D cross-correlation of `x: [n, c_in, h, w]` with `w: [c_out, c_in, k, k]`,
    /// `k` in {1, 3}, zero padding `(k - 1) / 2`, optional per-channel bias.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        let (sx, sw) = (tx.shape(), tw.shape());
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] || sw[2] != sw[3] || !(sw[2] == 1 || sw[2] == 3) || stride == 0 {
            return Err(Error::shape("conv2d", format!("input {sx:?}, kernel {sw:?}, stride {stride}")));
        }
        if let Some(b) = b {
            if self.value(b).len() != sw[0] {
                return Err(Error::shape("conv2d", format!("bias {:?} for {} outputs", self.value(b).shape(), sw[0])));
            }
        }
        let g = ConvGeom::new(sx, sw, stride);
        let mut out = vec![0.0; g.n * g.co * g.ho * g.wo];
        g.forward(tx.data(), tw.data(), &mut out);
        if let Some(b) = b {
            let tb = self.value(b).data();
            for (chunk, bias) in out.chunks_mut(g.ho * g.wo).zip(tb.iter().cycle()) {
                chunk.iter_mut().for_each(|v| *v += bias);
            }
        }
        let v = Tensor::new(&[g.n, g.co, g.ho, g.wo], out)?;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(Op::Conv2d { x, w, b, stride }, v, &inputs))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(|a| a.max(0.0));
        Ok(self.push(Op::Relu(x), v, &[x]))
    }

    pub fn softmax_last(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let k = *tx.shape().last().ok_or_else(|| Error::shape("softmax", "scalar input"))?;
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(k) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            row.iter_mut().for_each(|v| *v /= sum);
        }
        let v = Tensor::new(tx.shape(), data)?;
        Ok(self.push(Op::Softmax(x), v, &[x]))
    }

    fn reduce_axis(&mut self, x: Var, axis: usize, mean: bool) -> Result<Var> {
        let tx = self.value(x);
        if axis >= tx.shape().len() {
            return Err(Error::shape("reduce", format!("axis {axis} of {:?}", tx.shape())));
        }
        let (outer, n, inner) = split_axis(tx.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        let src = tx.data();
        for o in 0..outer {
            for k in 0..n {
                let row = &src[(o * n + k) * inner..(o * n + k + 1) * inner];
                for (acc, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        if mean {
            out.iter_mut().for_each(|v| *v /= n as f64);
        }
        let mut shape = tx.shape().to_vec();
        shape.remove(axis);
        let v = Tensor::new(&shape, out)?;
        let op = if mean { Op::MeanAxis { x, axis } } else { Op::SumAxis { x, axis } };
        Ok(self.push(op, v, &[x]))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(x, axis, true)
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(x, axis, false)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let v = Tensor::scalar(tx.data().iter().sum::<f64>() / tx.len() as f64);
        Ok(self.push(Op::MeanAll(x), v, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(x).data().iter().sum());
        Ok(self.push(Op::SumAll(x), v, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(Op::Reshape(x), v, &[x]))
    }

    /// Samples a channel-last grid `[h, w, c]` at continuous coordinates
    /// `(u, v)` in `[0, 1]^2` (row `u * (h - 1)`, column `v * (w - 1)`),
    /// clamping to the grid bounds. Output `[coords.len(), c]`.
    pub fn bilinear_sample(&mut self, grid: Var, coords: Vec<[f64; 2]>) -> Result<Var> {
        let tg = self.value(grid);
        let s = tg.shape();
        if s.len() != 3 || s[0] < 2 || s[1] < 2 {
            return Err(Error::shape("bilinear_sample", format!("grid {s:?} needs [h>=2, w>=2, c]")));
        }
        if coords.is_empty() {
            return Err(Error::shape("bilinear_sample", "no coordinates"));
        }
        let (h, w, c) = (s[0], s[1], s[2]);
        let src = tg.data();
        let mut out = vec![0.0; coords.len() * c];
        for (row, &[u, v]) in out.chunks_mut(c).zip(&coords) {
            let (i0, t) = stencil(u, h);
            let (j0, r) = stencil(v, w);
            let taps = [
                ((i0 * w + j0) * c, (1.0 - t) * (1.0 - r)),
                ((i0 * w + j0 + 1) * c, (1.0 - t) * r),
                (((i0 + 1) * w + j0) * c, t * (1.0 - r)),
                (((i0 + 1) * w + j0 + 1) * c, t * r),
            ];
            for (off, wt) in taps {
                for (o, g) in row.iter_mut().zip(&src[off..off + c]) {
                    *o += wt * g;
                }
            }
        }
        let v = Tensor::new(&[coords.len(), c], out)?;
        Ok(self.push(Op::Bilinear { grid, coords }, v, &[grid]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let v = self.value(x).map(|a| a * factor);
        Ok(self.push(Op::Scale(x, factor), v, &[x]))
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(|a| a * a);
        Ok(self.push(Op::Square(x), v, &[x]))
    }

    pub fn log1p(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(f64::ln_1p);
        Ok(self.push(Op::Log1p(x), v, &[x]))
    }

    /// Stacks equally shaped `[n, rest..]` tensors into `[n, k, rest..]`.
    pub fn stack(&mut self, xs: &[Var]) -> Result<Var> {
        let first = self.value(*xs.first().ok_or_else(|| Error::shape("stack", "no inputs"))?);
        let shape = first.shape().to_vec();
        if shape.is_empty() {
            return Err(Error::shape("stack", "scalar inputs"));
        }
        for &x in xs {
            same_shape("stack", first, self.value(x))?;
        }
        let n = shape[0];
        let inner: usize = shape[1..].iter().product();
        let k = xs.len();
        let mut out = vec![0.0; n * k * inner];
        for (j, &x) in xs.iter().enumerate() {
            let src = self.value(x).data();
            for i in 0..n {
                out[(i * k + j) * inner..(i * k + j + 1) * inner]
                    .copy_from_slice(&src[i * inner..(i + 1) * inner]);
            }
        }
        let mut out_shape = vec![n, k];
        out_shape.extend_from_slice(&shape[1..]);
        let v = Tensor::new(&out_shape, out)?;
        Ok(self.push(Op::Stack(xs.to_vec()), v, xs))
    }

    /// Per-row convex mixing: `w: [n, k]`, `f: [n, k, c]` -> `sum_k w[n,k] f[n,k,:]`.
    pub fn mix(&mut self, w: Var, f: Var) -> Result<Var> {
        let (tw, tf) = (self.value(w), self.value(f));
        let (sw, sf) = (tw.shape(), tf.shape());
        if sw.len() != 2 || sf.len() != 3 || sw[0] != sf[0] || sw[1] != sf[1] {
            return Err(Error::shape("mix", format!("weights {sw:?}, features {sf:?}")));
        }
        let (n, k, c) = (sf[0], sf[1], sf[2]);
        let mut out = vec![0.0; n * c];
        for i in 0..n {
            let row = &mut out[i * c..(i + 1) * c];
            for j in 0..k {
                let wt = tw.data()[i * k + j];
                let src = &tf.data()[(i * k + j) * c..(i * k + j + 1) * c];
                for (o, s) in row.iter_mut().zip(src) {
                    *o += wt * s;
                }
            }
        }
        let v = Tensor::new(&[n, c], out)?;
        Ok(self.push(Op::Mix { w, f }, v, &[w, f]))
    }

    /// Mean squared forward difference of a `[h, w, c]` grid, pooled over
    /// both grid axes and all channels.
    pub fn total_variation(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let s = tx.shape();
        if s.len() != 3 || s[0] < 2 || s[1] < 2 {
            return Err(Error::shape("total_variation", format!("grid {s:?}")));
        }
        let (h, w, c) = (s[0], s[1], s[2]);
        let d = tx.data();
        let mut acc = 0.0;
        for i in 0..h {
            for j in 0..w {
                let base = (i * w + j) * c;
                if j + 1 < w {
                    for k in 0..c {
                        let diff = d[base + c + k] - d[base + k];
                        acc += diff * diff;
                    }
                }
                if i + 1 < h {
                    for k in 0..c {
                        let diff = d[base + w * c + k] - d[base + k];
                        acc += diff * diff;
                    }
                }
            }
        }
        let count = (c * (h - 1) * w + c * h * (w - 1)) as f64;
        let v = Tensor::scalar(acc / count);
        Ok(self.push(Op::Tv(x), v, &[x]))
    }

    /// Nearest-neighbour resampling of `[c, h, w]` to `[c, out_h, out_w]`.
    pub fn resize_nearest(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let tx = self.value(x);
        let s = tx.shape();
        if s.len() != 3 || out_h == 0 || out_w == 0 {
            return Err(Error::shape("resize_nearest", format!("{s:?} -> {out_h}x{out_w}")));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let mut out = vec![0.0; c * out_h * out_w];
        for ch in 0..c {
            for i in 0..out_h {
                let si = i * h / out_h;
                for j in 0..out_w {
                    let sj = j * w / out_w;
                    out[(ch * out_h + i) * out_w + j] = tx.data()[(ch * h + si) * w + sj];
                }
            }
        }
        let v = Tensor::new(&[c, out_h, out_w], out)?;
        Ok(self.push(Op::ResizeNearest(x), v, &[x]))
    }

    /// Corner-aligned bilinear resampling of `[c, h, w]` to `[c, out_h, out_w]`.
    pub fn resize_bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let tx = self.value(x);
        let s = tx.shape();
        if s.len() != 3 || s[1] < 2 || s[2] < 2 || out_h == 0 || out_w == 0 {
            return Err(Error::shape("resize_bilinear", format!("{s:?} -> {out_h}x{out_w}")));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let mut out = vec![0.0; c * out_h * out_w];
        let d = tx.data();
        for i in 0..out_h {
            let (i0, t) = stencil(resize_src(i, h, out_h) / (h - 1) as f64, h);
            for j in 0..out_w {
                let (j0, r) = stencil(resize_src(j, w, out_w) / (w - 1) as f64, w);
                for ch in 0..c {
                    let base = ch * h * w;
                    out[(ch * out_h + i) * out_w + j] = (1.0 - t) * (1.0 - r) * d[base + i0 * w + j0]
                        + (1.0 - t) * r * d[base + i0 * w + j0 + 1]
                        + t * (1.0 - r) * d[base + (i0 + 1) * w + j0]
                        + t * r * d[base + (i0 + 1) * w + j0 + 1];
                }
            }
        }
        let v = Tensor::new(&[c, out_h, out_w], out)?;
        Ok(self.push(Op::ResizeBilinear(x), v, &[x]))
    }

    /// Rows `start..start + len` of the leading axis.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        let s = tx.shape();
        if s.is_empty() || len == 0 || start + len > s[0] {
            return Err(Error::shape("slice", format!("{start}..{} of {s:?}", start + len)));
        }
        let inner: usize = s[1..].iter().product();
        let data = tx.data()[start * inner..(start + len) * inner].to_vec();
        let mut shape = s.to_vec();
        shape[0] = len;
        let v = Tensor::new(&shape, data)?;
        Ok(self.push(Op::Slice { x, start }, v, &[x]))
    }

    /// `[c, h, w] -> [h, w, c]`.
    pub fn channel_last(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let s = tx.shape();
        if s.len() != 3 {
            return Err(Error::shape("channel_last", format!("{s:?}")));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let mut out = vec![0.0; c * h * w];
        for ch in 0..c {
            for p in 0..h * w {
                out[p * c + ch] = tx.data()[ch * h * w + p];
            }
        }
        let v = Tensor::new(&[h, w, c], out)?;
        Ok(self.push(Op::ChannelLast(x), v, &[x]))
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Grads> {
        let root_val = self.value(root);
        if root_val.len() != 1 {
            return Err(Error::NonScalarRoot(root_val.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(root_val.shape(), 1.0));
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(&node.op, &node.value, g, &mut grads);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Grads { grads, shapes })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.wants(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Like `accumulate`, but builds the contribution in place.
    fn accumulate_with(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.wants(v) {
            return;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.value(v).shape()));
        }
        f(slot.as_mut().unwrap().data_mut());
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: Tensor, grads: &mut [Option<Tensor>]) {
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.wants(b) {
                    self.accumulate(grads, b, g.clone());
                }
                self.accumulate(grads, a, g);
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, b, g.map(|x| -x));
                self.accumulate(grads, a, g);
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(a), self.value(b));
                if self.wants(a) {
                    let d = g.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, a, Tensor::new(ta.shape(), d).unwrap());
                }
                if self.wants(b) {
                    let d = g.data().iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, b, Tensor::new(tb.shape(), d).unwrap());
                }
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(a), self.value(b));
                let (n, k, m) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                self.accumulate_with(grads, a, |ga| {
                    // ga[i, p] += sum_j g[i, j] * b[p, j]
                    for i in 0..n {
                        let gi = &g.data()[i * m..(i + 1) * m];
                        for p in 0..k {
                            let bp = &tb.data()[p * m..(p + 1) * m];
                            ga[i * k + p] += dot(gi, bp);
                        }
                    }
                });
                self.accumulate_with(grads, b, |gb| {
                    // gb[p, j] += sum_i a[i, p] * g[i, j]
                    for i in 0..n {
                        let gi = &g.data()[i * m..(i + 1) * m];
                        for p in 0..k {
                            let a_ip = ta.data()[i * k + p];
                            if a_ip != 0.0 {
                                axpy(a_ip, gi, &mut gb[p * m..(p + 1) * m]);
                            }
                        }
                    }
                });
            }
            Op::AddBias(x, b) => {
                let f = self.value(b).len();
                self.accumulate_with(grads, b, |gb| {
                    for row in g.data().chunks(f) {
                        axpy(1.0, row, gb);
                    }
                });
                self.accumulate(grads, x, g);
            }
            Op::Conv2d { x, w, b, stride } => {
                let (tx, tw) = (self.value(x), self.value(w));
                let geom = ConvGeom::new(tx.shape(), tw.shape(), stride);
                if let Some(b) = b {
                    let plane = geom.ho * geom.wo;
                    self.accumulate_with(grads, b, |gb| {
                        for (idx, chunk) in g.data().chunks(plane).enumerate() {
                            gb[idx % geom.co] += chunk.iter().sum::<f64>();
                        }
                    });
                }
                self.accumulate_with(grads, x, |gx| geom.backward_input(g.data(), tw.data(), gx));
                self.accumulate_with(grads, w, |gw| geom.backward_kernel(g.data(), tx.data(), gw));
            }
            Op::Relu(x) => {
                let tx = self.value(x);
                let d = g.data().iter().zip(tx.data()).map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 }).collect();
                self.accumulate(grads, x, Tensor::new(tx.shape(), d).unwrap());
            }
            Op::Softmax(x) => {
                let k = *out.shape().last().unwrap();
                let mut d = vec![0.0; out.len()];
                for ((dr, yr), gr) in d.chunks_mut(k).zip(out.data().chunks(k)).zip(g.data().chunks(k)) {
                    let inner = dot(gr, yr);
                    for ((dv, yv), gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *dv = yv * (gv - inner);
                    }
                }
                self.accumulate(grads, x, Tensor::new(out.shape(), d).unwrap());
            }
            Op::MeanAxis { x, axis } | Op::SumAxis { x, axis } => {
                let tx = self.value(x);
                let (outer, n, inner) = split_axis(tx.shape(), axis);
                let scale = if matches!(op, Op::MeanAxis { .. }) { 1.0 / n as f64 } else { 1.0 };
                self.accumulate_with(grads, x, |gx| {
                    for o in 0..outer {
                        let src = &g.data()[o * inner..(o + 1) * inner];
                        for k in 0..n {
                            axpy(scale, src, &mut gx[(o * n + k) * inner..(o * n + k + 1) * inner]);
                        }
                    }
                });
            }
            Op::MeanAll(x) | Op::SumAll(x) => {
                let tx = self.value(x);
                let scale = if matches!(op, Op::MeanAll(_)) { g.item() / tx.len() as f64 } else { g.item() };
                self.accumulate_with(grads, x, |gx| gx.iter_mut().for_each(|v| *v += scale));
            }
            Op::Reshape(x) => {
                let shape = self.value(x).shape().to_vec();
                self.accumulate(grads, x, g.reshaped(&shape).unwrap());
            }
            Op::Bilinear { grid, ref coords } => {
                let s = self.value(grid).shape();
                let (h, w, c) = (s[0], s[1], s[2]);
                self.accumulate_with(grads, grid, |gg| {
                    for (row, &[u, v]) in g.data().chunks(c).zip(coords) {
                        let (i0, t) = stencil(u, h);
                        let (j0, r) = stencil(v, w);
                        axpy((1.0 - t) * (1.0 - r), row, &mut gg[(i0 * w + j0) * c..][..c]);
                        axpy((1.0 - t) * r, row, &mut gg[(i0 * w + j0 + 1) * c..][..c]);
                        axpy(t * (1.0 - r), row, &mut gg[((i0 + 1) * w + j0) * c..][..c]);
                        axpy(t * r, row, &mut gg[((i0 + 1) * w + j0 + 1) * c..][..c]);
                    }
                });
            }
            Op::Scale(x, factor) => self.accumulate(grads, x, g.map(|v| v * factor)),
            Op::Square(x) => {
                let tx = self.value(x);
                let d = g.data().iter().zip(tx.data()).map(|(gv, xv)| 2.0 * xv * gv).collect();
                self.accumulate(grads, x, Tensor::new(tx.shape(), d).unwrap());
            }
            Op::Log1p(x) => {
                let tx = self.value(x);
                let d = g.data().iter().zip(tx.data()).map(|(gv, xv)| gv / (1.0 + xv)).collect();
                self.accumulate(grads, x, Tensor::new(tx.shape(), d).unwrap());
            }
            Op::Stack(ref xs) => {
                let n = out.shape()[0];
                let k = xs.len();
                let inner = out.len() / (n * k);
                for (j, &x) in xs.iter().enumerate() {
                    self.accumulate_with(grads, x, |gx| {
                        for i in 0..n {
                            axpy(1.0, &g.data()[(i * k + j) * inner..][..inner], &mut gx[i * inner..][..inner]);
                        }
                    });
                }
            }
            Op::Mix { w, f } => {
                let (tw, tf) = (self.value(w), self.value(f));
                let s = tf.shape();
                let (n, k, c) = (s[0], s[1], s[2]);
                self.accumulate_with(grads, w, |gw| {
                    for i in 0..n {
                        let gi = &g.data()[i * c..(i + 1) * c];
                        for j in 0..k {
                            gw[i * k + j] += dot(gi, &tf.data()[(i * k + j) * c..][..c]);
                        }
                    }
                });
                self.accumulate_with(grads, f, |gf| {
                    for i in 0..n {
                        let gi = &g.data()[i * c..(i + 1) * c];
                        for j in 0..k {
                            axpy(tw.data()[i * k + j], gi, &mut gf[(i * k + j) * c..][..c]);
                        }
                    }
                });
            }
            Op::Tv(x) => {
                let tx = self.value(x);
                let s = tx.shape();
                let (h, w, c) = (s[0], s[1], s[2]);
                let count = (c * (h - 1) * w + c * h * (w - 1)) as f64;
                let scale = 2.0 * g.item() / count;
                let d = tx.data();
                self.accumulate_with(grads, x, |gx| {
                    for i in 0..h {
                        for j in 0..w {
                            let base = (i * w + j) * c;
                            if j + 1 < w {
                                for k in 0..c {
                                    let diff = scale * (d[base + c + k] - d[base + k]);
                                    gx[base + c + k] += diff;
                                    gx[base + k] -= diff;
                                }
                            }
                            if i + 1 < h {
                                for k in 0..c {
                                    let diff = scale * (d[base + w * c + k] - d[base + k]);
                                    gx[base + w * c + k] += diff;
                                    gx[base + k] -= diff;
                                }
                            }
                        }
                    }
                });
            }
            Op::ResizeNearest(x) => {
                let s = self.value(x).shape();
                let (c, h, w) = (s[0], s[1], s[2]);
                let (oh, ow) = (out.shape()[1], out.shape()[2]);
                self.accumulate_with(grads, x, |gx| {
                    for ch in 0..c {
                        for i in 0..oh {
                            let si = i * h / oh;
                            for j in 0..ow {
                                gx[(ch * h + si) * w + j * w / ow] += g.data()[(ch * oh + i) * ow + j];
                            }
                        }
                    }
                });
            }
            Op::ResizeBilinear(x) => {
                let s = self.value(x).shape();
                let (c, h, w) = (s[0], s[1], s[2]);
                let (oh, ow) = (out.shape()[1], out.shape()[2]);
                self.accumulate_with(grads, x, |gx| {
                    for i in 0..oh {
                        let (i0, t) = stencil(resize_src(i, h, oh) / (h - 1) as f64, h);
                        for j in 0..ow {
                            let (j0, r) = stencil(resize_src(j, w, ow) / (w - 1) as f64, w);
                            for ch in 0..c {
                                let gv = g.data()[(ch * oh + i) * ow + j];
                                let base = ch * h * w;
                                gx[base + i0 * w + j0] += (1.0 - t) * (1.0 - r) * gv;
                                gx[base + i0 * w + j0 + 1] += (1.0 - t) * r * gv;
                                gx[base + (i0 + 1) * w + j0] += t * (1.0 - r) * gv;
                                gx[base + (i0 + 1) * w + j0 + 1] += t * r * gv;
                            }
                        }
                    }
                });
            }
            Op::Slice { x, start } => {
                let inner = out.len() / out.shape()[0];
                self.accumulate_with(grads, x, |gx| {
                    axpy(1.0, g.data(), &mut gx[start * inner..start * inner + g.len()]);
                });
            }
            Op::ChannelLast(x) => {
                let s = self.value(x).shape();
                let (c, h, w) = (s[0], s[1], s[2]);
                self.accumulate_with(grads, x, |gx| {
                    for ch in 0..c {
                        for p in 0..h * w {
                            gx[ch * h * w + p] += g.data()[p * c + ch];
                        }
                    }
                });
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip != 0.0 {
                axpy(a_ip, &b[p * m..(p + 1) * m], row);
            }
        }
    }
}

struct ConvGeom {
    n: usize,
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    k: usize,
    pad: usize,
    stride: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn new(sx: &[usize], sw: &[usize], stride: usize) -> Self {
        let (n, ci, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        let (co, k) = (sw[0], sw[2]);
        let pad = (k - 1) / 2;
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        ConvGeom { n, ci, h, w, co, k, pad, stride, ho, wo }
    }

    /// Visits every (input offset, output offset) pair for one kernel tap,
    /// calling `f(in_row, out_row, ix_range)` per output row.
    #[inline]
    fn rows(&self, ky: usize, kx: usize, mut f: impl FnMut(usize, usize, usize, usize)) {
        for oy in 0..self.ho {
            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
            if iy < 0 || iy >= self.h as isize {
                continue;
            }
            // valid ox satisfy 0 <= ox*stride + kx - pad < w
            let lo = if kx >= self.pad { 0 } else { (self.pad - kx).div_ceil(self.stride) };
            let hi_excl = {
                let lim = self.w + self.pad - kx; // ox*stride < lim
                lim.div_ceil(self.stride).min(self.wo)
            };
            if lo >= hi_excl {
                continue;
            }
            f(iy as usize, oy, lo, hi_excl);
        }
    }

    fn forward(&self, x: &[f64], wt: &[f64], out: &mut [f64]) {
        let (hw, ohw, kk) = (self.h * self.w, self.ho * self.wo, self.k * self.k);
        out.par_chunks_mut(ohw).enumerate().for_each(|(idx, o)| {
            let (n, co) = (idx / self.co, idx % self.co);
            for ci in 0..self.ci {
                let xin = &x[(n * self.ci + ci) * hw..][..hw];
                let taps = &wt[(co * self.ci + ci) * kk..][..kk];
                for ky in 0..self.k {
                    for kx in 0..self.k {
                        let wv = taps[ky * self.k + kx];
                        self.rows(ky, kx, |iy, oy, lo, hi| {
                            let orow = &mut o[oy * self.wo + lo..oy * self.wo + hi];
                            let start = iy * self.w + lo * self.stride + kx - self.pad;
                            if self.stride == 1 {
                                for (ov, iv) in orow.iter_mut().zip(&xin[start..start + hi - lo]) {
                                    *ov += wv * iv;
                                }
                            } else {
                                for (ov, iv) in orow.iter_mut().zip(xin[start..].iter().step_by(self.stride)) {
                                    *ov += wv * iv;
                                }
                            }
                        });
                    }
                }
            }
        });
    }

    fn backward_input(&self, g: &[f64], wt: &[f64], gx: &mut [f64]) {
        let (hw, ohw, kk) = (self.h * self.w, self.ho * self.wo, self.k * self.k);
        gx.par_chunks_mut(hw).enumerate().for_each(|(idx, gin)| {
            let (n, ci) = (idx / self.ci, idx % self.ci);
            for co in 0..self.co {
                let go = &g[(n * self.co + co) * ohw..][..ohw];
                let taps = &wt[(co * self.ci + ci) * kk..][..kk];
                for ky in 0..self.k {
                    for kx in 0..self.k {
                        let wv = taps[ky * self.k + kx];
                        self.rows(ky, kx, |iy, oy, lo, hi| {
                            let grow = &go[oy * self.wo + lo..oy * self.wo + hi];
                            let start = iy * self.w + lo * self.stride + kx - self.pad;
                            if self.stride == 1 {
                                for (iv, gv) in gin[start..start + hi - lo].iter_mut().zip(grow) {
                                    *iv += wv * gv;
                                }
                            } else {
                                for (iv, gv) in gin[start..].iter_mut().step_by(self.stride).zip(grow) {
                                    *iv += wv * gv;
                                }
                            }
                        });
                    }
                }
            }
        });
    }

    fn backward_kernel(&self, g: &[f64], x: &[f64], gw: &mut [f64]) {
        let (hw, ohw, kk) = (self.h * self.w, self.ho * self.wo, self.k * self.k);
        gw.par_chunks_mut(self.ci * kk).enumerate().for_each(|(co, gco)| {
            for n in 0..self.n {
                let go = &g[(n * self.co + co) * ohw..][..ohw];
                for ci in 0..self.ci {
                    let xin = &x[(n * self.ci + ci) * hw..][..hw];
                    for ky in 0..self.k {
                        for kx in 0..self.k {
                            let mut acc = 0.0;
                            self.rows(ky, kx, |iy, oy, lo, hi| {
                                let grow = &go[oy * self.wo + lo..oy * self.wo + hi];
                                let start = iy * self.w + lo * self.stride + kx - self.pad;
                                acc += if self.stride == 1 {
                                    dot(grow, &xin[start..start + hi - lo])
                                } else {
                                    grow.iter().zip(xin[start..].iter().step_by(self.stride)).map(|(a, b)| a * b).sum::<f64>()
                                };
                            });
                            gco[(ci * self.k + ky) * self.k + kx] += acc;
                        }
                    }
                }
            }
        });
    }
}
