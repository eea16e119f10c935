use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::gemm::{gemm, View};
use super::params::{ParamId, ParameterStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::math;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param,
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        a_stride: usize,
        b_stride: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Abs(Var),
    Softmax(Var),
    Concat(Vec<Var>),
    Slice { a: Var, start: usize },
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Conv1d {
        input: Var,
        kernel: Var,
        bias: Var,
    },
    RowNormalize(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Ordered record of primitive applications.
///
/// Nodes are appended after their inputs, so the record is always in
/// topological order and [`Tape::backward`] visits each node once, newest
/// first.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(ParamId, Var)>,
}

/// Gradients produced by one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if `v` required one.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// `(parameter, gradient)` for every parameter placed on the tape.
    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.params
            .iter()
            .map(|&(id, v)| (id, self.grads[v.0].as_deref().expect("param grads filled")))
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

/// `b` broadcasts against `a` when its shape is a suffix of `a`'s shape or
/// when it holds a single value.
fn broadcastable(a: &Tensor, b: &Tensor) -> bool {
    b.numel() == 1 || a.shape().ends_with(b.shape())
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A free leaf whose gradient is reported by [`Gradients::get`].
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Places a stored parameter on the tape. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParameterStore, id: ParamId) -> Var {
        if let Some(&(_, v)) = self.params.iter().find(|(p, _)| *p == id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param, true);
        self.params.push((id, v));
        v
    }

    /// Matrix product over the last two axes.
    ///
    /// Either operand may be rank 2 or rank 3; a rank-2 operand is shared
    /// across the batch of the other.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        let bad = || shape_err("matmul", ta, tb);
        let (batch, m, k, n, a_stride, b_stride, out_shape): (_, _, _, _, _, _, Vec<usize>) =
            match (sa.len(), sb.len()) {
                (2, 2) if sa[1] == sb[0] => (1, sa[0], sa[1], sb[1], 0, 0, vec![sa[0], sb[1]]),
                // Shared right operand: fold the batch into the rows.
                (3, 2) if sa[2] == sb[0] => (
                    1,
                    sa[0] * sa[1],
                    sa[2],
                    sb[1],
                    0,
                    0,
                    vec![sa[0], sa[1], sb[1]],
                ),
                (2, 3) if sa[1] == sb[1] => (
                    sb[0],
                    sa[0],
                    sa[1],
                    sb[2],
                    0,
                    sb[1] * sb[2],
                    vec![sb[0], sa[0], sb[2]],
                ),
                (3, 3) if sa[0] == sb[0] && sa[2] == sb[1] => (
                    sa[0],
                    sa[1],
                    sa[2],
                    sb[2],
                    sa[1] * sa[2],
                    sb[1] * sb[2],
                    vec![sa[0], sa[1], sb[2]],
                ),
                _ => return Err(bad()),
            };
        let mut out = vec![0.0; batch * m * n];
        for bi in 0..batch {
            let av = View::row_major(&ta.data()[bi * a_stride..bi * a_stride + m * k], m, k);
            let bv = View::row_major(&tb.data()[bi * b_stride..bi * b_stride + k * n], k, n);
            gemm(av, bv, 0.0, &mut out[bi * m * n..(bi + 1) * m * n]);
        }
        let needs = self.needs(a) || self.needs(b);
        let value = Tensor::new(&out_shape, out)?;
        Ok(self.push(
            value,
            Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                a_stride,
                b_stride,
            },
            needs,
        ))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !broadcastable(ta, tb) {
            return Err(shape_err(name, ta, tb));
        }
        let bn = tb.numel();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, tb.data()[i % bn]))
            .collect();
        let value = Tensor::new(ta.shape(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, op, needs))
    }

    /// `a + b`, with `b` broadcast over `a`'s leading axes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product, with `b` broadcast over `a`'s leading axes.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| x * factor).collect();
        let value = Tensor::new(ta.shape(), data).expect("same shape");
        let needs = self.needs(a);
        self.push(value, Op::Scale(a, factor), needs)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| x.max(0.0)).collect();
        let value = Tensor::new(ta.shape(), data).expect("same shape");
        let needs = self.needs(a);
        self.push(value, Op::Relu(a), needs)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| math::abs(x)).collect();
        let value = Tensor::new(ta.shape(), data).expect("same shape");
        let needs = self.needs(a);
        self.push(value, Op::Abs(a), needs)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let width = ta.last_dim();
        let mut data = ta.data().to_vec();
        for row in data.chunks_mut(width) {
            let peak = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let mut total = 0.0;
            for x in row.iter_mut() {
                *x = math::exp(*x - peak);
                total += *x;
            }
            for x in row.iter_mut() {
                *x /= total;
            }
        }
        let value = Tensor::new(ta.shape(), data).expect("same shape");
        let needs = self.needs(a);
        self.push(value, Op::Softmax(a), needs)
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let lead = {
            let s = self.value(first).shape();
            if s.is_empty() {
                return Err(Error::Contract("concat of scalars".into()));
            }
            s[..s.len() - 1].to_vec()
        };
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != lead.len() + 1 || s[..lead.len()] != lead[..] {
                return Err(shape_err("concat", self.value(first), self.value(p)));
            }
        }
        let rows: usize = lead.iter().product();
        let width: usize = parts.iter().map(|&p| self.value(p).last_dim()).sum();
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for &p in parts {
                let t = self.value(p);
                let w = t.last_dim();
                data.extend_from_slice(&t.data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(width);
        let needs = parts.iter().any(|&p| self.needs(p));
        let value = Tensor::new(&shape, data)?;
        Ok(self.push(value, Op::Concat(parts.to_vec()), needs))
    }

    /// `a[..., start..start + len]`.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ta = self.value(a);
        let width = ta.last_dim();
        if ta.shape().is_empty() || start + len > width {
            return Err(Error::Dimension(format!(
                "slice {start}..{} out of last axis {width} of {:?}",
                start + len,
                ta.shape()
            )));
        }
        let mut data = Vec::with_capacity(ta.numel() / width * len);
        for row in ta.data().chunks(width) {
            data.extend_from_slice(&row[start..start + len]);
        }
        let mut shape = ta.shape().to_vec();
        *shape.last_mut().expect("non-scalar") = len;
        let needs = self.needs(a);
        let value = Tensor::new(&shape, data)?;
        Ok(self.push(value, Op::Slice { a, start }, needs))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().sum();
        let needs = self.needs(a);
        self.push(Tensor::scalar(total), Op::Sum(a), needs)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let mean = ta.data().iter().sum::<f64>() / ta.numel().max(1) as f64;
        let needs = self.needs(a);
        self.push(Tensor::scalar(mean), Op::Mean(a), needs)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = Tensor::new(shape, self.value(a).data().to_vec())?;
        let needs = self.needs(a);
        Ok(self.push(value, Op::Reshape(a), needs))
    }

    /// Valid 1-D convolution along the last axis with one input channel.
    ///
    /// `input` is `[..., L]`, `kernel` is `[C, K]` and `bias` is `[C]`. The
    /// output is `[..., C * (L - K + 1)]`, channel-major within each row.
    pub fn conv1d(&mut self, input: Var, kernel: Var, bias: Var) -> Result<Var> {
        let (tx, tk, tb) = (self.value(input), self.value(kernel), self.value(bias));
        if tk.shape().len() != 2 || tb.shape() != [tk.shape()[0]] || tx.shape().is_empty() {
            return Err(shape_err("conv1d", tx, tk));
        }
        let (channels, taps) = (tk.shape()[0], tk.shape()[1]);
        let len_in = tx.last_dim();
        if taps == 0 || taps > len_in {
            return Err(Error::Dimension(format!(
                "conv1d: kernel size {taps} exceeds input length {len_in}"
            )));
        }
        let len_out = len_in - taps + 1;
        let rows = tx.numel() / len_in;
        let mut out = vec![0.0; rows * channels * len_out];
        for (x, y) in tx
            .data()
            .chunks(len_in)
            .zip(out.chunks_mut(channels * len_out))
        {
            for c in 0..channels {
                let w = &tk.data()[c * taps..(c + 1) * taps];
                let b = tb.data()[c];
                for (t, o) in y[c * len_out..(c + 1) * len_out].iter_mut().enumerate() {
                    let window = &x[t..t + taps];
                    *o = b + window.iter().zip(w).map(|(xv, wv)| xv * wv).sum::<f64>();
                }
            }
        }
        let mut shape = tx.shape().to_vec();
        *shape.last_mut().expect("non-scalar") = channels * len_out;
        let needs = self.needs(input) || self.needs(kernel) || self.needs(bias);
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(
            value,
            Op::Conv1d {
                input,
                kernel,
                bias,
            },
            needs,
        ))
    }

    /// Divides every row (last axis) by its sum; all-zero rows stay zero.
    pub fn row_normalize(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let width = ta.last_dim();
        let mut data = ta.data().to_vec();
        for row in data.chunks_mut(width) {
            let total: f64 = row.iter().sum();
            if total != 0.0 {
                for x in row.iter_mut() {
                    *x /= total;
                }
            }
        }
        let value = Tensor::new(ta.shape(), data).expect("same shape");
        let needs = self.needs(a);
        self.push(value, Op::RowNormalize(a), needs)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.apply_rule(&node.op, &node.value, &g, &mut grads);
            grads[idx] = Some(g);
        }
        for &(_, v) in &self.params {
            if grads[v.0].is_none() {
                grads[v.0] = Some(vec![0.0; self.value(v).numel()]);
            }
        }
        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }

    fn apply_rule(&self, op: &Op, out: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match *op {
            Op::Leaf | Op::Param => {}
            Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                a_stride,
                b_stride,
            } => {
                let (ta, tb) = (self.value(a), self.value(b));
                if let Some(ga) = self.slot(a, grads) {
                    for bi in 0..batch {
                        let gv = View::row_major(&g[bi * m * n..(bi + 1) * m * n], m, n);
                        let bt = View::transposed(
                            &tb.data()[bi * b_stride..bi * b_stride + k * n],
                            n,
                            k,
                        );
                        gemm(gv, bt, 1.0, &mut ga[bi * a_stride..bi * a_stride + m * k]);
                    }
                }
                if let Some(gb) = self.slot(b, grads) {
                    for bi in 0..batch {
                        let at = View::transposed(
                            &ta.data()[bi * a_stride..bi * a_stride + m * k],
                            k,
                            m,
                        );
                        let gv = View::row_major(&g[bi * m * n..(bi + 1) * m * n], m, n);
                        gemm(at, gv, 1.0, &mut gb[bi * b_stride..bi * b_stride + k * n]);
                    }
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if let Some(ga) = self.slot(a, grads) {
                    for (x, &gv) in ga.iter_mut().zip(g) {
                        *x += gv;
                    }
                }
                if let Some(gb) = self.slot(b, grads) {
                    let bn = gb.len();
                    for (i, &gv) in g.iter().enumerate() {
                        gb[i % bn] += sign * gv;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(a), self.value(b));
                let bn = tb.numel();
                if let Some(ga) = self.slot(a, grads) {
                    for (i, (x, &gv)) in ga.iter_mut().zip(g).enumerate() {
                        *x += gv * tb.data()[i % bn];
                    }
                }
                if let Some(gb) = self.slot(b, grads) {
                    for (i, (&gv, &av)) in g.iter().zip(ta.data()).enumerate() {
                        gb[i % bn] += gv * av;
                    }
                }
            }
            Op::Scale(a, factor) => {
                if let Some(ga) = self.slot(a, grads) {
                    for (x, &gv) in ga.iter_mut().zip(g) {
                        *x += factor * gv;
                    }
                }
            }
            Op::Relu(a) => {
                let ta = self.value(a);
                if let Some(ga) = self.slot(a, grads) {
                    for ((x, &gv), &av) in ga.iter_mut().zip(g).zip(ta.data()) {
                        if av > 0.0 {
                            *x += gv;
                        }
                    }
                }
            }
            Op::Abs(a) => {
                let ta = self.value(a);
                if let Some(ga) = self.slot(a, grads) {
                    for ((x, &gv), &av) in ga.iter_mut().zip(g).zip(ta.data()) {
                        if av > 0.0 {
                            *x += gv;
                        } else if av < 0.0 {
                            *x -= gv;
                        }
                    }
                }
            }
            Op::Softmax(a) => {
                let width = out.last_dim();
                if let Some(ga) = self.slot(a, grads) {
                    for ((gx, gy), y) in ga
                        .chunks_mut(width)
                        .zip(g.chunks(width))
                        .zip(out.data().chunks(width))
                    {
                        let dot: f64 = gy.iter().zip(y).map(|(a, b)| a * b).sum();
                        for ((x, &gv), &yv) in gx.iter_mut().zip(gy).zip(y) {
                            *x += yv * (gv - dot);
                        }
                    }
                }
            }
            Op::Concat(ref parts) => {
                let width = out.last_dim();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).last_dim();
                    if let Some(gp) = self.slot(p, grads) {
                        for (dst, src) in gp.chunks_mut(w).zip(g.chunks(width)) {
                            for (x, &gv) in dst.iter_mut().zip(&src[offset..offset + w]) {
                                *x += gv;
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::Slice { a, start } => {
                let width = self.value(a).last_dim();
                let len = out.last_dim();
                if let Some(ga) = self.slot(a, grads) {
                    for (dst, src) in ga.chunks_mut(width).zip(g.chunks(len)) {
                        for (x, &gv) in dst[start..start + len].iter_mut().zip(src) {
                            *x += gv;
                        }
                    }
                }
            }
            Op::Sum(a) | Op::Mean(a) => {
                let numel = self.value(a).numel();
                let gv = if matches!(op, Op::Mean(_)) {
                    g[0] / numel.max(1) as f64
                } else {
                    g[0]
                };
                if let Some(ga) = self.slot(a, grads) {
                    for x in ga.iter_mut() {
                        *x += gv;
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = self.slot(a, grads) {
                    for (x, &gv) in ga.iter_mut().zip(g) {
                        *x += gv;
                    }
                }
            }
            Op::Conv1d {
                input,
                kernel,
                bias,
            } => {
                let (tx, tk) = (self.value(input), self.value(kernel));
                let (channels, taps) = (tk.shape()[0], tk.shape()[1]);
                let len_in = tx.last_dim();
                let len_out = len_in - taps + 1;
                if let Some(gx) = self.slot(input, grads) {
                    for (dx, dy) in gx.chunks_mut(len_in).zip(g.chunks(channels * len_out)) {
                        for c in 0..channels {
                            let w = &tk.data()[c * taps..(c + 1) * taps];
                            for (t, &gv) in dy[c * len_out..(c + 1) * len_out].iter().enumerate() {
                                for (x, &wv) in dx[t..t + taps].iter_mut().zip(w) {
                                    *x += gv * wv;
                                }
                            }
                        }
                    }
                }
                if let Some(gk) = self.slot(kernel, grads) {
                    for (x, dy) in tx.data().chunks(len_in).zip(g.chunks(channels * len_out)) {
                        for c in 0..channels {
                            let dw = &mut gk[c * taps..(c + 1) * taps];
                            for (t, &gv) in dy[c * len_out..(c + 1) * len_out].iter().enumerate() {
                                for (w, &xv) in dw.iter_mut().zip(&x[t..t + taps]) {
                                    *w += gv * xv;
                                }
                            }
                        }
                    }
                }
                if let Some(gb) = self.slot(bias, grads) {
                    for dy in g.chunks(channels * len_out) {
                        for (c, b) in gb.iter_mut().enumerate() {
                            *b += dy[c * len_out..(c + 1) * len_out].iter().sum::<f64>();
                        }
                    }
                }
            }
            Op::RowNormalize(a) => {
                let ta = self.value(a);
                let width = ta.last_dim();
                if let Some(ga) = self.slot(a, grads) {
                    for (((gx, gy), x), y) in ga
                        .chunks_mut(width)
                        .zip(g.chunks(width))
                        .zip(ta.data().chunks(width))
                        .zip(out.data().chunks(width))
                    {
                        let total: f64 = x.iter().sum();
                        if total == 0.0 {
                            continue;
                        }
                        let dot: f64 = gy.iter().zip(y).map(|(a, b)| a * b).sum();
                        for (dst, &gv) in gx.iter_mut().zip(gy) {
                            *dst += (gv - dot) / total;
                        }
                    }
                }
            }
        }
    }

    /// Gradient buffer for `v`, allocated on first use; `None` when `v` takes
    /// no gradient.
    fn slot<'g>(&self, v: Var, grads: &'g mut [Option<Vec<f64>>]) -> Option<&'g mut Vec<f64>> {
        if !self.needs(v) {
            return None;
        }
        let numel = self.value(v).numel();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; numel]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n: usize = shape.iter().product();
        t(shape, &(0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>())
    }

    #[test]
    fn matmul_by_identity_is_unchanged() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let i = tape.constant(Tensor::eye(2));
        let c = tape.matmul(a, i).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_primitive() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        assert_eq!(
            err,
            Error::Shape {
                op: "matmul",
                lhs: vec![2, 3],
                rhs: vec![2, 3]
            }
        );
    }

    #[test]
    fn relu_value_and_mask() {
        let mut tape = Tape::new();
        let x = tape.variable(t(&[2], &[-1.0, 2.0]));
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 2.0]);
        let s = tape.sum(y);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[0.0, 1.0]);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[3]));
        let y = tape.softmax(x);
        for &v in tape.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn linear_loss_gradient_is_input() {
        // loss = sum(W x) with x fixed: dW[i][j] = x[j].
        let mut tape = Tape::new();
        let w = tape.variable(t(&[2, 3], &[0.1, -0.2, 0.3, 0.4, 0.5, -0.6]));
        let x = tape.constant(t(&[3, 1], &[1.0, 2.0, 3.0]));
        let y = tape.matmul(w, x).unwrap();
        let loss = tape.sum(y);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn quadratic_loss_gradient() {
        let w0 = [0.5, -1.0, 2.0, 0.25];
        let c = [1.0, 1.0, -1.0, 0.0];
        let mut tape = Tape::new();
        let w = tape.variable(t(&[4], &w0));
        let cv = tape.constant(t(&[4], &c));
        let d = tape.sub(w, cv).unwrap();
        let sq = tape.mul(d, d).unwrap();
        let loss = tape.mean(sq);
        let grads = tape.backward(loss).unwrap();
        for (i, g) in grads.get(w).unwrap().iter().enumerate() {
            assert!((g - 2.0 * (w0[i] - c[i]) / 4.0).abs() < 1e-15);
        }
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::zeros(&[2]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn conv_with_delta_kernel_reproduces_suffix() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 5], &[1.0, 2.0, 3.0, 4.0, 5.0]));
        let k = tape.constant(t(&[1, 3], &[0.0, 0.0, 1.0]));
        let b = tape.constant(t(&[1], &[0.0]));
        let y = tape.conv1d(x, k, b).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 3]);
        assert_eq!(tape.value(y).data(), &[3.0, 4.0, 5.0]);
    }

    #[test]
    fn row_normalize_keeps_zero_rows() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2, 2], &[1.0, 1.0, 0.0, 0.0]));
        let y = tape.row_normalize(x);
        assert_eq!(tape.value(y).data(), &[0.5, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn replay_gives_identical_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let wv = random(&[4, 3], &mut rng);
        let xv = random(&[2, 5, 4], &mut rng);
        let run = || {
            let mut tape = Tape::new();
            let w = tape.variable(wv.clone());
            let x = tape.constant(xv.clone());
            let h = tape.matmul(x, w).unwrap();
            let h = tape.relu(h);
            let s = tape.softmax(h);
            let l = tape.sum(s);
            let sq = tape.mul(h, h).unwrap();
            let m = tape.mean(sq);
            let loss = tape.add(l, m).unwrap();
            tape.backward(loss).unwrap().get(w).unwrap().to_vec()
        };
        assert_eq!(run(), run());
    }

    /// Central-difference check of every primitive's backward rule.
    fn check_gradients(
        inputs: &[Tensor],
        build: impl Fn(&mut Tape, &[Var]) -> Var,
    ) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.variable(x.clone())).collect();
        let out = build(&mut tape, &vars);
        let loss = tape.sum(out);
        let grads = tape.backward(loss).unwrap();
        let eval = |perturbed: &[Tensor]| {
            let mut tape = Tape::new();
            let vars: Vec<Var> = perturbed.iter().map(|x| tape.constant(x.clone())).collect();
            let out = build(&mut tape, &vars);
            tape.value(out).data().iter().sum::<f64>()
        };
        let eps = 1e-5;
        for (which, x) in inputs.iter().enumerate() {
            for i in 0..x.numel() {
                let mut plus = inputs.to_vec();
                plus[which].data_mut()[i] += eps;
                let mut minus = inputs.to_vec();
                minus[which].data_mut()[i] -= eps;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * eps);
                let an = grads.get(vars[which]).unwrap()[i];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                assert!(rel < 1e-4, "input {which} coord {i}: fd {fd} vs {an}");
            }
        }
    }

    #[test]
    fn primitive_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let weights = random(&[3, 4], &mut rng);
        check_gradients(&[random(&[2, 3], &mut rng), weights.clone()], |tp, v| {
            tp.matmul(v[0], v[1]).unwrap()
        });
        check_gradients(&[random(&[2, 3, 3], &mut rng), random(&[2, 3, 4], &mut rng)], |tp, v| {
            tp.matmul(v[0], v[1]).unwrap()
        });
        check_gradients(&[random(&[3, 3], &mut rng), random(&[2, 3, 4], &mut rng)], |tp, v| {
            tp.matmul(v[0], v[1]).unwrap()
        });
        check_gradients(&[random(&[2, 5, 3], &mut rng), weights], |tp, v| {
            tp.matmul(v[0], v[1]).unwrap()
        });
        check_gradients(&[random(&[2, 3], &mut rng), random(&[3], &mut rng)], |tp, v| {
            let s = tp.add(v[0], v[1]).unwrap();
            let d = tp.sub(s, v[1]).unwrap();
            let p = tp.mul(d, v[1]).unwrap();
            tp.mul(p, p).unwrap()
        });
        check_gradients(&[random(&[2, 3], &mut rng), random(&[1], &mut rng)], |tp, v| {
            tp.mul(v[0], v[1]).unwrap()
        });
        check_gradients(&[random(&[2, 4], &mut rng)], |tp, v| {
            let s = tp.softmax(v[0]);
            let c = tp.constant(t(&[4], &[1.0, -2.0, 0.5, 3.0]));
            tp.mul(s, c).unwrap()
        });
        check_gradients(&[random(&[2, 4], &mut rng)], |tp, v| {
            let a = tp.abs(v[0]);
            let r = tp.relu(v[0]);
            let q = tp.mul(a, r).unwrap();
            tp.scale(q, 0.7)
        });
        check_gradients(&[random(&[2, 2], &mut rng), random(&[2, 3], &mut rng)], |tp, v| {
            let c = tp.concat(&[v[0], v[1]]).unwrap();
            let s = tp.slice(c, 1, 3).unwrap();
            let r = tp.reshape(s, &[3, 2]).unwrap();
            tp.mul(r, r).unwrap()
        });
        check_gradients(
            &[random(&[2, 3, 8], &mut rng), random(&[2, 3], &mut rng), random(&[2], &mut rng)],
            |tp, v| {
                let y = tp.conv1d(v[0], v[1], v[2]).unwrap();
                tp.mul(y, y).unwrap()
            },
        );
        let positive = t(&[2, 3], &[0.2, 0.9, 0.4, 1.5, 0.1, 0.7]);
        check_gradients(&[positive], |tp, v| {
            let y = tp.row_normalize(v[0]);
            let c = tp.constant(t(&[3], &[1.0, -2.0, 0.5]));
            tp.mul(y, c).unwrap()
        });
        check_gradients(&[random(&[3, 2], &mut rng)], |tp, v| {
            let m = tp.mean(v[0]);
            let s = tp.sum(v[0]);
            tp.mul(m, s).unwrap()
        });
    }
}
