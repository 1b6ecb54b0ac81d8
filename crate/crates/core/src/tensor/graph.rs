use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{gelu, gelu_grad, gemm_nn, gemm_nt, gemm_tn, split_axis};
use super::Tensor;
use crate::error::{Error, Result};

/// Additive score applied to masked attention keys.
pub const MASK_NEG: f64 = -1e9;

/// Controls dropout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulConst { x: Var, c: Vec<f64> },
    AddBias { x: Var, b: Var },
    Expand { x: Var, axis: usize, n: usize },
    Reshape(Var),
    Concat { xs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    SwapAxes12(Var),
    MatMul { a: Var, b: Var, trans_b: bool, shared_b: bool },
    Softmax { x: Var, axis: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Relu(Var),
    Gelu(Var),
    Square(Var),
    Sum(Var),
    Conv1d { x: Var, kernel: Var, bias: Var },
    Embedding { table: Var, ids: Vec<usize> },
    MaskedMean { x: Var, mask: Vec<f64>, counts: Vec<f64> },
    Dropout { x: Var, keep: Vec<f64> },
    SegmentMean { x: Var, segments: Vec<Vec<(usize, usize)>> },
    Gather { x: Var, index: Vec<Option<usize>> },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records primitive operations for reverse-mode differentiation.
///
/// A graph is built for one forward pass and dropped afterwards. It is not
/// `Sync`-shared; use one graph per thread.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

fn dims_err(op: &'static str, detail: alloc::string::String) -> Error {
    Error::shape(op, detail)
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

    /// Registers a differentiable leaf.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Registers a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last [`backward`](Self::backward) loss with respect to a leaf.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(dims_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn zip_with(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::from_parts(va.shape().to_vec(), data);
        self.push(name, value, op, &[a, b])
    }

    fn map(&mut self, name: &'static str, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let vx = self.value(x);
        let value = Tensor::from_parts(vx.shape().to_vec(), vx.data().iter().map(|&v| f(v)).collect());
        self.push(name, value, op, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.map("scale", x, |v| v * c, Op::Scale(x, c))
    }

    /// Elementwise product with a constant buffer of the same size (masks).
    pub fn mul_const(&mut self, x: Var, c: &[f64]) -> Result<Var> {
        let vx = self.value(x);
        if vx.numel() != c.len() {
            return Err(dims_err("mul_const", format!("{:?} vs {} values", vx.shape(), c.len())));
        }
        let data = vx.data().iter().zip(c).map(|(a, b)| a * b).collect();
        let value = Tensor::from_parts(vx.shape().to_vec(), data);
        self.push("mul_const", value, Op::MulConst { x, c: c.to_vec() }, &[x])
    }

    /// `x[..., d] + b[d]`
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let vx = self.value(x);
        let vb = self.value(b);
        let d = vb.numel();
        if vb.rank() != 1 || vx.shape().last() != Some(&d) {
            return Err(dims_err("add_bias", format!("{:?} + {:?}", vx.shape(), vb.shape())));
        }
        let mut data = vx.data().to_vec();
        for row in data.chunks_exact_mut(d) {
            for (v, &bv) in row.iter_mut().zip(vb.data()) {
                *v += bv;
            }
        }
        let value = Tensor::from_parts(vx.shape().to_vec(), data);
        self.push("add_bias", value, Op::AddBias { x, b }, &[x, b])
    }

    /// Inserts a new axis of size `n` at position `axis`, repeating the values.
    pub fn expand(&mut self, x: Var, axis: usize, n: usize) -> Result<Var> {
        let vx = self.value(x);
        if axis > vx.rank() {
            return Err(dims_err("expand", format!("axis {axis} for rank {}", vx.rank())));
        }
        let outer: usize = vx.shape()[..axis].iter().product();
        let inner: usize = vx.shape()[axis..].iter().product();
        let mut data = Vec::with_capacity(outer * n * inner);
        for o in 0..outer {
            let chunk = &vx.data()[o * inner..(o + 1) * inner];
            for _ in 0..n {
                data.extend_from_slice(chunk);
            }
        }
        let mut shape = vx.shape().to_vec();
        shape.insert(axis, n);
        self.push("expand", Tensor::from_parts(shape, data), Op::Expand { x, axis, n }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self
            .value(x)
            .reshaped(shape)
            .map_err(|_| dims_err("reshape", format!("{:?} -> {shape:?}", self.shape(x))))?;
        self.push("reshape", value, Op::Reshape(x), &[x])
    }

    /// Concatenates along an existing axis.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| Error::Contract("concat of nothing".into()))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(dims_err("concat", format!("axis {axis} for rank {}", base.len())));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(dims_err("concat", format!("{:?} vs {:?}", s, base)));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let len = self.shape(v)[axis] * inner;
                data.extend_from_slice(&self.value(v).data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        self.push("concat", Tensor::from_parts(shape, data), Op::Concat { xs: xs.to_vec(), axis }, xs)
    }

    /// Takes `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let vx = self.value(x);
        if axis >= vx.rank() || start + len > vx.shape()[axis] {
            return Err(dims_err(
                "slice",
                format!("[{start}..{}] on axis {axis} of {:?}", start + len, vx.shape()),
            ));
        }
        let (outer, n, inner) = split_axis(vx.shape(), axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * n * inner + start * inner;
            data.extend_from_slice(&vx.data()[base..base + len * inner]);
        }
        let mut shape = vx.shape().to_vec();
        shape[axis] = len;
        self.push("slice", Tensor::from_parts(shape, data), Op::Slice { x, axis, start }, &[x])
    }

    /// Stacks equally shaped tensors along a new axis.
    pub fn stack(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let mut parts = Vec::with_capacity(xs.len());
        for &v in xs {
            let mut s = self.shape(v).to_vec();
            if axis > s.len() {
                return Err(dims_err("stack", format!("axis {axis} for rank {}", s.len())));
            }
            s.insert(axis, 1);
            parts.push(self.reshape(v, &s)?);
        }
        self.concat(&parts, axis)
    }

    /// Picks index `idx` along `axis`, dropping the axis.
    pub fn select(&mut self, x: Var, axis: usize, idx: usize) -> Result<Var> {
        let s = self.slice(x, axis, idx, 1)?;
        let mut shape = self.shape(s).to_vec();
        shape.remove(axis);
        self.reshape(s, &shape)
    }

    /// `[a, b, c, d] -> [a, c, b, d]`
    pub fn swap_axes12(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let &[a, b, c, d] = vx.shape() else {
            return Err(dims_err("swap_axes12", format!("rank 4 expected, got {:?}", vx.shape())));
        };
        let src = vx.data();
        let mut data = vec![0.0; src.len()];
        for i in 0..a {
            for j in 0..b {
                for k in 0..c {
                    let from = ((i * b + j) * c + k) * d;
                    let to = ((i * c + k) * b + j) * d;
                    data[to..to + d].copy_from_slice(&src[from..from + d]);
                }
            }
        }
        self.push("swap_axes12", Tensor::from_parts(vec![a, c, b, d], data), Op::SwapAxes12(x), &[x])
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let name = if trans_b { "matmul_nt" } else { "matmul" };
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() < 2 || sb.len() < 2 {
            return Err(dims_err(name, format!("{sa:?} x {sb:?}: rank >= 2 required")));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) =
            if trans_b { (sb[sb.len() - 1], sb[sb.len() - 2]) } else { (sb[sb.len() - 2], sb[sb.len() - 1]) };
        if k != kb {
            return Err(dims_err(name, format!("{sa:?} x {sb:?}: inner dims {k} != {kb}")));
        }
        let shared_b = sb.len() == 2;
        let batch: usize = sa[..sa.len() - 2].iter().product();
        if !shared_b && sa[..sa.len() - 2] != sb[..sb.len() - 2] {
            return Err(dims_err(name, format!("{sa:?} x {sb:?}: batch dims differ")));
        }
        let mut out = vec![0.0; batch * m * n];
        let (da, db) = (self.value(a).data(), self.value(b).data());
        if shared_b && !trans_b {
            gemm_nn(batch * m, k, n, da, db, &mut out);
        } else if shared_b {
            gemm_nt(batch * m, k, n, da, db, &mut out);
        } else {
            for i in 0..batch {
                let ab = &da[i * m * k..(i + 1) * m * k];
                let bb = &db[i * k * n..(i + 1) * k * n];
                let cb = &mut out[i * m * n..(i + 1) * m * n];
                if trans_b {
                    gemm_nt(m, k, n, ab, bb, cb);
                } else {
                    gemm_nn(m, k, n, ab, bb, cb);
                }
            }
        }
        let mut shape = sa;
        let last = shape.len() - 1;
        shape[last] = n;
        self.push(name, Tensor::from_parts(shape, out), Op::MatMul { a, b, trans_b, shared_b }, &[a, b])
    }

    /// `a[..., m, k] · b[..., k, n]`; a rank-2 `b` is shared across the batch dims of `a`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a[..., m, k] · b[..., n, k]ᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    /// `x·w + b` over the last axis, with `w: [in, out]` and `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }

    /// Numerically stabilized softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let vx = self.value(x);
        if axis >= vx.rank() || vx.shape()[axis] == 0 {
            return Err(dims_err("softmax", format!("axis {axis} of {:?}", vx.shape())));
        }
        let (outer, n, inner) = split_axis(vx.shape(), axis);
        let mut data = vx.data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * n + j) * inner + i;
                let max = (0..n).map(|j| data[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for j in 0..n {
                    let e = libm::exp(data[idx(j)] - max);
                    data[idx(j)] = e;
                    sum += e;
                }
                for j in 0..n {
                    data[idx(j)] /= sum;
                }
            }
        }
        let shape = vx.shape().to_vec();
        self.push("softmax", Tensor::from_parts(shape, data), Op::Softmax { x, axis }, &[x])
    }

    /// Softmax over the last axis of `scores[N, Tq, Tk]` after adding [`MASK_NEG`]
    /// to keys whose `key_mask[N, Tk]` entry is 0.
    pub fn softmax_masked(&mut self, scores: Var, key_mask: &[f64]) -> Result<Var> {
        let vs = self.value(scores);
        let &[nb, tq, tk] = vs.shape() else {
            return Err(dims_err("softmax_masked", format!("rank 3 expected, got {:?}", vs.shape())));
        };
        if key_mask.len() != nb * tk {
            return Err(dims_err(
                "softmax_masked",
                format!("mask of {} for {:?}", key_mask.len(), vs.shape()),
            ));
        }
        let mut additive = vec![0.0; nb * tq * tk];
        for b in 0..nb {
            for q in 0..tq {
                for k in 0..tk {
                    if key_mask[b * tk + k] == 0.0 {
                        additive[(b * tq + q) * tk + k] = MASK_NEG;
                    }
                }
            }
        }
        let m = self.constant(Tensor::from_parts(vs.shape().to_vec(), additive));
        let shifted = self.add(scores, m)?;
        self.softmax(shifted, 2)
    }

    /// Normalizes over the last axis, then applies `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let vx = self.value(x);
        let d = *vx.shape().last().unwrap_or(&0);
        if d == 0 || self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(dims_err(
                "layer_norm",
                format!("{:?} with gamma {:?}, beta {:?}", vx.shape(), self.shape(gamma), self.shape(beta)),
            ));
        }
        let rows = vx.numel() / d;
        let mut xhat = vec![0.0; vx.numel()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; vx.numel()];
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        for r in 0..rows {
            let row = &vx.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let denom = libm::sqrt(var + eps);
            if denom == 0.0 {
                return Err(Error::NonFinite { op: "layer_norm" });
            }
            let is = 1.0 / denom;
            inv_std[r] = is;
            for j in 0..d {
                let xh = (row[j] - mean) * is;
                xhat[r * d + j] = xh;
                out[r * d + j] = xh * g[j] + b[j];
            }
        }
        let shape = vx.shape().to_vec();
        self.push(
            "layer_norm",
            Tensor::from_parts(shape, out),
            Op::LayerNorm { x, gamma, beta, xhat, inv_std },
            &[x, gamma, beta],
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.map("relu", x, |v| if v > 0.0 { v } else { 0.0 }, Op::Relu(x))
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.map("gelu", x, gelu, Op::Gelu(x))
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.map("square", x, |v| v * v, Op::Square(x))
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Zero-padded "same" 1-D cross-correlation over the sequence axis.
    ///
    /// `x` is `[T, d_in]` or `[N, T, d_in]`, `kernel` is `[k, d_in, d_out]` with odd
    /// `k`, `bias` is `[d_out]`.
    pub fn conv1d_same(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sk = self.shape(kernel).to_vec();
        let (nb, t, din) = match sx[..] {
            [t, d] => (1, t, d),
            [n, t, d] => (n, t, d),
            _ => return Err(dims_err("conv1d_same", format!("input {sx:?}"))),
        };
        let &[k, kin, dout] = &sk[..] else {
            return Err(dims_err("conv1d_same", format!("kernel {sk:?}")));
        };
        if k % 2 == 0 {
            return Err(Error::Config(format!("conv1d_same needs an odd kernel size, got {k}")));
        }
        if kin != din || self.shape(bias) != [dout] {
            return Err(dims_err(
                "conv1d_same",
                format!("input {sx:?}, kernel {sk:?}, bias {:?}", self.shape(bias)),
            ));
        }
        let pad = k / 2;
        let (xd, kd, bd) = (self.value(x).data(), self.value(kernel).data(), self.value(bias).data());
        let mut out = vec![0.0; nb * t * dout];
        for n in 0..nb {
            for pos in 0..t {
                let o = &mut out[(n * t + pos) * dout..(n * t + pos + 1) * dout];
                o.copy_from_slice(bd);
                for j in 0..k {
                    let Some(src) = (pos + j).checked_sub(pad).filter(|&s| s < t) else {
                        continue;
                    };
                    let xrow = &xd[(n * t + src) * din..(n * t + src + 1) * din];
                    gemm_nn(1, din, dout, xrow, &kd[j * din * dout..(j + 1) * din * dout], o);
                }
            }
        }
        let mut shape = sx;
        let last = shape.len() - 1;
        shape[last] = dout;
        self.push(
            "conv1d_same",
            Tensor::from_parts(shape, out),
            Op::Conv1d { x, kernel, bias },
            &[x, kernel, bias],
        )
    }

    /// Row lookup: the output has shape `index_shape ++ [D]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize], index_shape: &[usize]) -> Result<Var> {
        let vt = self.value(table);
        let &[vocab, d] = vt.shape() else {
            return Err(dims_err("embedding", format!("table {:?}", vt.shape())));
        };
        if index_shape.iter().product::<usize>() != ids.len() {
            return Err(dims_err("embedding", format!("{} ids for index shape {index_shape:?}", ids.len())));
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= vocab {
                return Err(Error::Lookup(format!("embedding id {id} outside vocabulary of {vocab}")));
            }
            data.extend_from_slice(&vt.data()[id * d..(id + 1) * d]);
        }
        let mut shape = index_shape.to_vec();
        shape.push(d);
        self.push(
            "embedding",
            Tensor::from_parts(shape, data),
            Op::Embedding { table, ids: ids.to_vec() },
            &[table],
        )
    }

    /// Mean of `x[N, T, D]` over positions whose `mask[N, T]` entry is 1.
    pub fn masked_mean(&mut self, x: Var, mask: &[f64]) -> Result<Var> {
        let vx = self.value(x);
        let &[nb, t, d] = vx.shape() else {
            return Err(dims_err("masked_mean", format!("rank 3 expected, got {:?}", vx.shape())));
        };
        if mask.len() != nb * t {
            return Err(dims_err("masked_mean", format!("mask of {} for {:?}", mask.len(), vx.shape())));
        }
        let mut counts = vec![0.0; nb];
        let mut out = vec![0.0; nb * d];
        for n in 0..nb {
            counts[n] = mask[n * t..(n + 1) * t].iter().sum();
            if counts[n] <= 0.0 {
                return Err(Error::Contract(format!("masked_mean: row {n} has no unmasked positions")));
            }
            let o = &mut out[n * d..(n + 1) * d];
            for p in 0..t {
                let w = mask[n * t + p];
                for (ov, &xv) in o.iter_mut().zip(&vx.data()[(n * t + p) * d..(n * t + p + 1) * d]) {
                    *ov += w * xv;
                }
            }
            for ov in o.iter_mut() {
                *ov /= counts[n];
            }
        }
        self.push(
            "masked_mean",
            Tensor::from_parts(vec![nb, d], out),
            Op::MaskedMean { x, mask: mask.to_vec(), counts },
            &[x],
        )
    }

    /// Inverted dropout. Identity in [`Mode::Eval`] or when `rate` is 0.
    pub fn dropout<R: rand::Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f64,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate must lie in [0, 1), got {rate}")));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let scale = 1.0 / (1.0 - rate);
        let n = self.value(x).numel();
        let keep: Vec<f64> = (0..n).map(|_| if rng.random::<f64>() < rate { 0.0 } else { scale }).collect();
        let vx = self.value(x);
        let data = vx.data().iter().zip(&keep).map(|(a, k)| a * k).collect();
        let value = Tensor::from_parts(vx.shape().to_vec(), data);
        self.push("dropout", value, Op::Dropout { x, keep }, &[x])
    }

    /// Averages `x[B, T, A]` over contiguous position spans.
    ///
    /// `segments[b]` lists half-open `(start, end)` spans; the output is `[B, W, A]`
    /// with `W = words`, and rows past the last span of an utterance are zero.
    pub fn segment_mean(&mut self, x: Var, segments: &[Vec<(usize, usize)>], words: usize) -> Result<Var> {
        let vx = self.value(x);
        let &[nb, t, a] = vx.shape() else {
            return Err(dims_err("segment_mean", format!("rank 3 expected, got {:?}", vx.shape())));
        };
        if segments.len() != nb {
            return Err(dims_err("segment_mean", format!("{} span lists for batch {nb}", segments.len())));
        }
        let mut out = vec![0.0; nb * words * a];
        for (b, spans) in segments.iter().enumerate() {
            if spans.len() > words {
                return Err(dims_err("segment_mean", format!("{} spans exceed {words} words", spans.len())));
            }
            for (w, &(s, e)) in spans.iter().enumerate() {
                if s >= e || e > t {
                    return Err(Error::Contract(format!("segment_mean: bad span ({s}, {e}) for length {t}")));
                }
                let o = &mut out[(b * words + w) * a..(b * words + w + 1) * a];
                for p in s..e {
                    for (ov, &xv) in o.iter_mut().zip(&vx.data()[(b * t + p) * a..(b * t + p + 1) * a]) {
                        *ov += xv;
                    }
                }
                let len = (e - s) as f64;
                for ov in o.iter_mut() {
                    *ov /= len;
                }
            }
        }
        self.push(
            "segment_mean",
            Tensor::from_parts(vec![nb, words, a], out),
            Op::SegmentMean { x, segments: segments.to_vec() },
            &[x],
        )
    }

    /// Copies rows of `x[B, W, A]` to `[B, T, A]`: position `(b, t)` receives row
    /// `index[b*T + t]`, or zeros for `None`.
    pub fn gather_rows(&mut self, x: Var, index: &[Option<usize>], t: usize) -> Result<Var> {
        let vx = self.value(x);
        let &[nb, w, a] = vx.shape() else {
            return Err(dims_err("gather_rows", format!("rank 3 expected, got {:?}", vx.shape())));
        };
        if index.len() != nb * t {
            return Err(dims_err("gather_rows", format!("{} indices for [{nb}, {t}]", index.len())));
        }
        let mut out = vec![0.0; nb * t * a];
        for b in 0..nb {
            for p in 0..t {
                if let Some(src) = index[b * t + p] {
                    if src >= w {
                        return Err(Error::Lookup(format!("gather_rows: row {src} of {w}")));
                    }
                    out[(b * t + p) * a..(b * t + p + 1) * a]
                        .copy_from_slice(&vx.data()[(b * w + src) * a..(b * w + src + 1) * a]);
                }
            }
        }
        self.push(
            "gather_rows",
            Tensor::from_parts(vec![nb, t, a], out),
            Op::Gather { x, index: index.to_vec() },
            &[x],
        )
    }

    /// Scaled dot-product attention for `q[N, Tq, d]`, `k[N, Tk, d]`, `v[N, Tk, dv]`
    /// with an optional key mask `[N, Tk]` (1 = attend).
    pub fn attention(&mut self, q: Var, k: Var, v: Var, key_mask: Option<&[f64]>) -> Result<Var> {
        let d = *self.shape(q).last().unwrap_or(&1);
        let scores = self.matmul_nt(q, k)?;
        let scores = self.scale(scores, 1.0 / libm::sqrt(d as f64))?;
        let weights = match key_mask {
            Some(mask) => self.softmax_masked(scores, mask)?,
            None => {
                let axis = self.value(scores).rank() - 1;
                self.softmax(scores, axis)?
            }
        };
        self.matmul(weights, v)
    }

    /// Back-propagates from a scalar `loss`, populating [`grad`](Self::grad) for
    /// every leaf that requires a gradient. Contributions at fan-out accumulate.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);
        self.grads = vec![None; n];
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            if matches!(self.nodes[i].op, Op::Leaf) {
                let shape = self.nodes[i].value.shape().to_vec();
                self.grads[i] = Some(Tensor::from_parts(shape, g));
            }
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) && self.grads[i].is_none() {
                self.grads[i] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        // Adds into the gradient buffer of `v`, allocating it on first use.
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let len = self.nodes[v.0].value.numel();
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
            f(buf);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(x, y)| *x += y));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |d| {
                    for ((x, gy), bv) in d.iter_mut().zip(g).zip(vb) {
                        *x += gy * bv;
                    }
                });
                acc(*b, &mut |d| {
                    for ((x, gy), av) in d.iter_mut().zip(g).zip(va) {
                        *x += gy * av;
                    }
                });
            }
            Op::Scale(x, c) => acc(*x, &mut |d| d.iter_mut().zip(g).for_each(|(v, gy)| *v += gy * c)),
            Op::MulConst { x, c } => acc(*x, &mut |d| {
                for ((v, gy), cv) in d.iter_mut().zip(g).zip(c) {
                    *v += gy * cv;
                }
            }),
            Op::AddBias { x, b } => {
                acc(*x, &mut |d| d.iter_mut().zip(g).for_each(|(v, gy)| *v += gy));
                acc(*b, &mut |d| {
                    let n = d.len();
                    for row in g.chunks_exact(n) {
                        d.iter_mut().zip(row).for_each(|(v, gy)| *v += gy);
                    }
                });
            }
            Op::Expand { x, axis, n } => {
                let sx = self.shape(*x);
                let outer: usize = sx[..*axis].iter().product();
                let inner: usize = sx[*axis..].iter().product();
                acc(*x, &mut |d| {
                    for o in 0..outer {
                        for r in 0..*n {
                            let src = &g[(o * n + r) * inner..(o * n + r + 1) * inner];
                            d[o * inner..(o + 1) * inner].iter_mut().zip(src).for_each(|(v, gy)| *v += gy);
                        }
                    }
                });
            }
            Op::Reshape(x) => acc(*x, &mut |d| d.iter_mut().zip(g).for_each(|(v, gy)| *v += gy)),
            Op::Concat { xs, axis } => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[*axis + 1..].iter().product();
                let row = shape[*axis] * inner;
                let mut offset = 0;
                for &v in xs {
                    let len = self.shape(v)[*axis] * inner;
                    acc(v, &mut |d| {
                        for o in 0..outer {
                            let src = &g[o * row + offset..o * row + offset + len];
                            d[o * len..(o + 1) * len].iter_mut().zip(src).for_each(|(a, b)| *a += b);
                        }
                    });
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, n, inner) = split_axis(self.shape(*x), *axis);
                let len = node.value.shape()[*axis];
                acc(*x, &mut |d| {
                    for o in 0..outer {
                        let base = o * n * inner + start * inner;
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        d[base..base + len * inner].iter_mut().zip(src).for_each(|(a, b)| *a += b);
                    }
                });
            }
            Op::SwapAxes12(x) => {
                let &[a, b, c, dd] = self.shape(*x) else { unreachable!() };
                acc(*x, &mut |d| {
                    for i in 0..a {
                        for j in 0..b {
                            for k in 0..c {
                                let to = ((i * b + j) * c + k) * dd;
                                let from = ((i * c + k) * b + j) * dd;
                                d[to..to + dd].iter_mut().zip(&g[from..from + dd]).for_each(|(p, q)| *p += q);
                            }
                        }
                    }
                });
            }
            Op::MatMul { a, b, trans_b, shared_b } => {
                let sa = self.shape(*a);
                let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
                let n = *node.value.shape().last().unwrap();
                let batch: usize = sa[..sa.len() - 2].iter().product();
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |d| {
                    if *shared_b {
                        if *trans_b {
                            gemm_nn(batch * m, n, k, g, vb, d);
                        } else {
                            gemm_nt(batch * m, n, k, g, vb, d);
                        }
                        return;
                    }
                    for i in 0..batch {
                        let gb = &g[i * m * n..(i + 1) * m * n];
                        let bb = &vb[i * k * n..(i + 1) * k * n];
                        let db = &mut d[i * m * k..(i + 1) * m * k];
                        if *trans_b {
                            gemm_nn(m, n, k, gb, bb, db);
                        } else {
                            gemm_nt(m, n, k, gb, bb, db);
                        }
                    }
                });
                acc(*b, &mut |d| {
                    if *shared_b {
                        if *trans_b {
                            gemm_tn(batch * m, n, k, g, va, d);
                        } else {
                            gemm_tn(batch * m, k, n, va, g, d);
                        }
                        return;
                    }
                    for i in 0..batch {
                        let gb = &g[i * m * n..(i + 1) * m * n];
                        let ab = &va[i * m * k..(i + 1) * m * k];
                        let db = &mut d[i * k * n..(i + 1) * k * n];
                        if *trans_b {
                            gemm_tn(m, n, k, gb, ab, db);
                        } else {
                            gemm_tn(m, k, n, ab, gb, db);
                        }
                    }
                });
            }
            Op::Softmax { x, axis } => {
                let (outer, n, inner) = split_axis(node.value.shape(), *axis);
                acc(*x, &mut |d| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |j: usize| (o * n + j) * inner + i;
                            let dot: f64 = (0..n).map(|j| g[idx(j)] * out[idx(j)]).sum();
                            for j in 0..n {
                                d[idx(j)] += out[idx(j)] * (g[idx(j)] - dot);
                            }
                        }
                    }
                });
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let dim = self.value(*gamma).numel();
                let gam = self.value(*gamma).data();
                acc(*x, &mut |d| {
                    for (r, &is) in inv_std.iter().enumerate() {
                        let gr = &g[r * dim..(r + 1) * dim];
                        let xh = &xhat[r * dim..(r + 1) * dim];
                        let mut sum_dxh = 0.0;
                        let mut sum_dxh_xh = 0.0;
                        for j in 0..dim {
                            let dxh = gr[j] * gam[j];
                            sum_dxh += dxh;
                            sum_dxh_xh += dxh * xh[j];
                        }
                        let nf = dim as f64;
                        for j in 0..dim {
                            let dxh = gr[j] * gam[j];
                            d[r * dim + j] += is * (dxh - sum_dxh / nf - xh[j] * sum_dxh_xh / nf);
                        }
                    }
                });
                acc(*gamma, &mut |d| {
                    for (gr, xh) in g.chunks_exact(dim).zip(xhat.chunks_exact(dim)) {
                        for j in 0..dim {
                            d[j] += gr[j] * xh[j];
                        }
                    }
                });
                acc(*beta, &mut |d| {
                    for gr in g.chunks_exact(dim) {
                        d.iter_mut().zip(gr).for_each(|(a, b)| *a += b);
                    }
                });
            }
            Op::Relu(x) => {
                let vx = self.value(*x).data();
                acc(*x, &mut |d| {
                    for ((a, gy), xv) in d.iter_mut().zip(g).zip(vx) {
                        if *xv > 0.0 {
                            *a += gy;
                        }
                    }
                });
            }
            Op::Gelu(x) => {
                let vx = self.value(*x).data();
                acc(*x, &mut |d| {
                    for ((a, gy), &xv) in d.iter_mut().zip(g).zip(vx) {
                        *a += gy * gelu_grad(xv);
                    }
                });
            }
            Op::Square(x) => {
                let vx = self.value(*x).data();
                acc(*x, &mut |d| {
                    for ((a, gy), xv) in d.iter_mut().zip(g).zip(vx) {
                        *a += 2.0 * gy * xv;
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |d| d.iter_mut().for_each(|a| *a += g[0])),
            Op::Conv1d { x, kernel, bias } => {
                let sx = self.shape(*x);
                let (nb, t, din) = match sx[..] {
                    [t, d] => (1, t, d),
                    [n, t, d] => (n, t, d),
                    _ => unreachable!(),
                };
                let sk = self.shape(*kernel);
                let (k, dout) = (sk[0], sk[2]);
                let pad = k / 2;
                let (xd, kd) = (self.value(*x).data(), self.value(*kernel).data());
                acc(*x, &mut |d| {
                    for n in 0..nb {
                        for pos in 0..t {
                            let gr = &g[(n * t + pos) * dout..(n * t + pos + 1) * dout];
                            for j in 0..k {
                                let Some(src) = (pos + j).checked_sub(pad).filter(|&s| s < t) else {
                                    continue;
                                };
                                let dx = &mut d[(n * t + src) * din..(n * t + src + 1) * din];
                                gemm_nt(1, dout, din, gr, &kd[j * din * dout..(j + 1) * din * dout], dx);
                            }
                        }
                    }
                });
                acc(*kernel, &mut |d| {
                    for n in 0..nb {
                        for pos in 0..t {
                            let gr = &g[(n * t + pos) * dout..(n * t + pos + 1) * dout];
                            for j in 0..k {
                                let Some(src) = (pos + j).checked_sub(pad).filter(|&s| s < t) else {
                                    continue;
                                };
                                let xrow = &xd[(n * t + src) * din..(n * t + src + 1) * din];
                                gemm_tn(1, din, dout, xrow, gr, &mut d[j * din * dout..(j + 1) * din * dout]);
                            }
                        }
                    }
                });
                acc(*bias, &mut |d| {
                    for gr in g.chunks_exact(dout) {
                        d.iter_mut().zip(gr).for_each(|(a, b)| *a += b);
                    }
                });
            }
            Op::Embedding { table, ids } => {
                let dim = self.shape(*table)[1];
                acc(*table, &mut |d| {
                    for (r, &id) in ids.iter().enumerate() {
                        d[id * dim..(id + 1) * dim]
                            .iter_mut()
                            .zip(&g[r * dim..(r + 1) * dim])
                            .for_each(|(a, b)| *a += b);
                    }
                });
            }
            Op::MaskedMean { x, mask, counts } => {
                let &[nb, t, dim] = self.shape(*x) else { unreachable!() };
                acc(*x, &mut |d| {
                    for n in 0..nb {
                        for p in 0..t {
                            let w = mask[n * t + p] / counts[n];
                            if w == 0.0 {
                                continue;
                            }
                            let dst = &mut d[(n * t + p) * dim..(n * t + p + 1) * dim];
                            dst.iter_mut().zip(&g[n * dim..(n + 1) * dim]).for_each(|(a, b)| *a += w * b);
                        }
                    }
                });
            }
            Op::Dropout { x, keep } => acc(*x, &mut |d| {
                for ((a, gy), k) in d.iter_mut().zip(g).zip(keep) {
                    *a += gy * k;
                }
            }),
            Op::SegmentMean { x, segments } => {
                let &[_, t, a] = self.shape(*x) else { unreachable!() };
                let words = node.value.shape()[1];
                acc(*x, &mut |d| {
                    for (b, spans) in segments.iter().enumerate() {
                        for (w, &(s, e)) in spans.iter().enumerate() {
                            let inv = 1.0 / (e - s) as f64;
                            let src = &g[(b * words + w) * a..(b * words + w + 1) * a];
                            for p in s..e {
                                let dst = &mut d[(b * t + p) * a..(b * t + p + 1) * a];
                                dst.iter_mut().zip(src).for_each(|(u, v)| *u += v * inv);
                            }
                        }
                    }
                });
            }
            Op::Gather { x, index } => {
                let &[_, w, a] = self.shape(*x) else { unreachable!() };
                let t = node.value.shape()[1];
                acc(*x, &mut |d| {
                    for (bt, src) in index.iter().enumerate() {
                        if let Some(src) = src {
                            let b = bt / t;
                            let dst = &mut d[(b * w + src) * a..(b * w + src + 1) * a];
                            dst.iter_mut().zip(&g[bt * a..(bt + 1) * a]).for_each(|(u, v)| *u += v);
                        }
                    }
                });
            }
        }
    }
}
