use super::tensor::{broadcast_shape, broadcast_strides, for_each_offset2, strides};
use super::{NumError, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Abs(Var),
    Softmax(Var),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    Concat { a: Var, b: Var, axis: usize },
    Reshape(Var),
    Permute(Var, Vec<usize>),
    SumAll(Var),
    MeanAll(Var),
    SumLast(Var),
    RsqrtOrZero(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records differentiable operations in execution order.
///
/// Nodes are appended as ops run, so every node's inputs precede it and a
/// single reverse sweep visits each node once.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

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

    /// Trainable leaf; receives a gradient on backward.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> NumError {
        NumError::ShapeMismatch {
            op,
            left: self.shape(a).to_vec(),
            right: self.shape(b).to_vec(),
        }
    }

    /// Batched matrix product over the last two axes; leading axes broadcast.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let geo = MatMulGeometry::new(self.shape(a), self.shape(b))
            .ok_or_else(|| self.mismatch("matmul", a, b))?;
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; geo.out_shape.iter().product()];
        let (m, k, n) = (geo.m, geo.k, geo.n);
        geo.for_each_batch(|oc, oa, ob| {
            let c = &mut out[oc..oc + m * n];
            for i in 0..m {
                let crow = &mut c[i * n..(i + 1) * n];
                for p in 0..k {
                    let x = av[oa + i * k + p];
                    if x == 0.0 {
                        continue;
                    }
                    let brow = &bv[ob + p * n..ob + (p + 1) * n];
                    for (cj, bj) in crow.iter_mut().zip(brow) {
                        *cj += x * bj;
                    }
                }
            }
        });
        let value = Tensor::new(geo.out_shape, out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    fn broadcast_binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, NumError> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let out_shape = broadcast_shape(&sa, &sb).ok_or_else(|| self.mismatch(name, a, b))?;
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let data = if sa == sb {
            av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let mut out = vec![0.0; out_shape.iter().product()];
            let ta = broadcast_strides(&sa, &out_shape);
            let tb = broadcast_strides(&sb, &out_shape);
            for_each_offset2(&out_shape, &ta, &tb, |o, ia, ib| out[o] = f(av[ia], bv[ib]));
            out
        };
        let value = Tensor::new(out_shape, data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.broadcast_binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.broadcast_binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.broadcast_binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x * c);
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, c), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(&[a]);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::abs);
        let rg = self.rg(&[a]);
        self.push(value, Op::Abs(a), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a).expect("identical shapes always conform")
    }

    /// `x·W + b` with `W: [in, out]` and `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, NumError> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add(y, b),
            None => Ok(y),
        }
    }

    /// Softmax over the last axis, stabilized by subtracting each row's max.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, NumError> {
        let x = self.value(a);
        if !x.is_finite() {
            return Err(NumError::NonFinite { op: "softmax_rows" });
        }
        let c = *x.shape().last().expect("rank >= 1");
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(c) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let value = Tensor::new(x.shape().to_vec(), out)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Softmax(a), rg))
    }

    /// Normalizes the last axis to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let c = *x.shape().last().expect("rank >= 1");
        let mut out = x.data().to_vec();
        let mut inv_std = Vec::with_capacity(out.len() / c);
        for row in out.chunks_mut(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let value = Tensor::new(x.shape().to_vec(), out).expect("same shape");
        let rg = self.rg(&[a]);
        self.push(value, Op::LayerNorm { x: a, inv_std }, rg)
    }

    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var, NumError> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if axis >= sa.len()
            || sa.len() != sb.len()
            || sa
                .iter()
                .zip(&sb)
                .enumerate()
                .any(|(i, (x, y))| i != axis && x != y)
        {
            return Err(self.mismatch("concat", a, b));
        }
        let outer: usize = sa[..axis].iter().product();
        let ia: usize = sa[axis..].iter().product();
        let ib: usize = sb[axis..].iter().product();
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = Vec::with_capacity(outer * (ia + ib));
        for o in 0..outer {
            out.extend_from_slice(&av[o * ia..(o + 1) * ia]);
            out.extend_from_slice(&bv[o * ib..(o + 1) * ib]);
        }
        let mut shape = sa;
        shape[axis] += sb[axis];
        let value = Tensor::new(shape, out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Concat { a, b, axis }, rg))
    }

    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let axis = self.shape(a).len().saturating_sub(1);
        self.concat(a, b, axis)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, NumError> {
        let value = self.value(a).reshape(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var, NumError> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len()
            || axes
                .iter()
                .any(|&ax| ax >= shape.len() || std::mem::replace(&mut seen[ax], true))
        {
            return Err(NumError::InvalidAxes {
                axes: axes.to_vec(),
                shape,
            });
        }
        let (out_shape, src_strides) = permuted_view(&shape, axes);
        let src = self.value(a).data();
        let mut out = vec![0.0; src.len()];
        let zeros = vec![0; out_shape.len()];
        for_each_offset2(&out_shape, &src_strides, &zeros, |o, is, _| out[o] = src[is]);
        let value = Tensor::new(out_shape, out)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Permute(a, axes.to_vec()), rg))
    }

    /// Swaps the last two axes.
    pub fn transpose_last2(&mut self, a: Var) -> Result<Var, NumError> {
        let r = self.shape(a).len();
        if r < 2 {
            return Err(NumError::InvalidAxes {
                axes: vec![],
                shape: self.shape(a).to_vec(),
            });
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(a, &axes)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::SumAll(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let s = x.data().iter().sum::<f64>() / x.len() as f64;
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::MeanAll(a), rg)
    }

    /// Sums the last axis away.
    pub fn sum_last(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let c = *x.shape().last().expect("rank >= 1");
        let data: Vec<f64> = x.data().chunks(c).map(|r| r.iter().sum()).collect();
        let mut shape = x.shape()[..x.rank() - 1].to_vec();
        if shape.is_empty() {
            shape.push(1);
        }
        let value = Tensor::new(shape, data).expect("consistent");
        let rg = self.rg(&[a]);
        self.push(value, Op::SumLast(a), rg)
    }

    /// `x^(-1/2)` for positive entries, `0` elsewhere.
    pub fn rsqrt_or_zero(&mut self, a: Var) -> Var {
        let value = self
            .value(a)
            .map(|x| if x > 0.0 { 1.0 / x.sqrt() } else { 0.0 });
        let rg = self.rg(&[a]);
        self.push(value, Op::RsqrtOrZero(a), rg)
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(NumError::NotScalar {
                shape: lv.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[id] = Some(g);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(id, g)| {
                g.filter(|_| self.nodes[id].requires_grad)
                    .map(|g| Tensor::new(self.nodes[id].value.shape().to_vec(), g).expect("grad shape"))
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let geo = MatMulGeometry::new(self.shape(a), self.shape(b)).expect("checked");
                let (m, k, n) = (geo.m, geo.k, geo.n);
                let av = self.value(a).data();
                let bv = self.value(b).data();
                if let Some(ga) = self.acc(grads, a) {
                    geo.for_each_batch(|oc, oa, ob| {
                        for i in 0..m {
                            let grow = &g[oc + i * n..oc + (i + 1) * n];
                            for p in 0..k {
                                let brow = &bv[ob + p * n..ob + (p + 1) * n];
                                ga[oa + i * k + p] +=
                                    grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                            }
                        }
                    });
                }
                if let Some(gb) = self.acc(grads, b) {
                    geo.for_each_batch(|oc, oa, ob| {
                        for i in 0..m {
                            let grow = &g[oc + i * n..oc + (i + 1) * n];
                            for p in 0..k {
                                let x = av[oa + i * k + p];
                                if x == 0.0 {
                                    continue;
                                }
                                let gbrow = &mut gb[ob + p * n..ob + (p + 1) * n];
                                for (t, gi) in gbrow.iter_mut().zip(grow) {
                                    *t += x * gi;
                                }
                            }
                        }
                    });
                }
            }
            &Op::Add(a, b) | &Op::Sub(a, b) | &Op::Mul(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                let is_mul = matches!(node.op, Op::Mul(..));
                let out_shape = node.value.shape();
                let ta = broadcast_strides(self.shape(a), out_shape);
                let tb = broadcast_strides(self.shape(b), out_shape);
                let av = self.value(a).data();
                let bv = self.value(b).data();
                if let Some(ga) = self.acc(grads, a) {
                    for_each_offset2(out_shape, &ta, &tb, |o, ia, ib| {
                        ga[ia] += if is_mul { g[o] * bv[ib] } else { g[o] };
                    });
                }
                if let Some(gb) = self.acc(grads, b) {
                    for_each_offset2(out_shape, &ta, &tb, |o, ia, ib| {
                        gb[ib] += if is_mul { g[o] * av[ia] } else { sign * g[o] };
                    });
                }
            }
            &Op::Scale(a, c) => {
                if let Some(ga) = self.acc(grads, a) {
                    ga.iter_mut().zip(g).for_each(|(t, gi)| *t += c * gi);
                }
            }
            &Op::Relu(a) => {
                let x = self.value(a).data();
                if let Some(ga) = self.acc(grads, a) {
                    for ((t, gi), xi) in ga.iter_mut().zip(g).zip(x) {
                        if *xi > 0.0 {
                            *t += gi;
                        }
                    }
                }
            }
            &Op::Abs(a) => {
                let x = self.value(a).data();
                if let Some(ga) = self.acc(grads, a) {
                    for ((t, gi), xi) in ga.iter_mut().zip(g).zip(x) {
                        *t += gi * sign_of(*xi);
                    }
                }
            }
            &Op::Softmax(a) => {
                let y = node.value.data();
                let c = *node.value.shape().last().expect("rank");
                if let Some(ga) = self.acc(grads, a) {
                    for ((yr, gr), tr) in y.chunks(c).zip(g.chunks(c)).zip(ga.chunks_mut(c)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for j in 0..c {
                            tr[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm { x, inv_std } => {
                let y = node.value.data();
                let c = *node.value.shape().last().expect("rank");
                if let Some(gx) = self.acc(grads, *x) {
                    for (r, ((yr, gr), tr)) in
                        y.chunks(c).zip(g.chunks(c)).zip(gx.chunks_mut(c)).enumerate()
                    {
                        let mg = gr.iter().sum::<f64>() / c as f64;
                        let mgy = gr.iter().zip(yr).map(|(p, q)| p * q).sum::<f64>() / c as f64;
                        for j in 0..c {
                            tr[j] += inv_std[r] * (gr[j] - mg - yr[j] * mgy);
                        }
                    }
                }
            }
            &Op::Concat { a, b, axis } => {
                let sa = self.shape(a);
                let sb = self.shape(b);
                let outer: usize = sa[..axis].iter().product();
                let ia: usize = sa[axis..].iter().product();
                let ib: usize = sb[axis..].iter().product();
                if let Some(ga) = self.acc(grads, a) {
                    for o in 0..outer {
                        let src = &g[o * (ia + ib)..o * (ia + ib) + ia];
                        ga[o * ia..(o + 1) * ia]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(t, s)| *t += s);
                    }
                }
                if let Some(gb) = self.acc(grads, b) {
                    for o in 0..outer {
                        let src = &g[o * (ia + ib) + ia..(o + 1) * (ia + ib)];
                        gb[o * ib..(o + 1) * ib]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(t, s)| *t += s);
                    }
                }
            }
            &Op::Reshape(a) => {
                if let Some(ga) = self.acc(grads, a) {
                    ga.iter_mut().zip(g).for_each(|(t, s)| *t += s);
                }
            }
            Op::Permute(a, axes) => {
                let (out_shape, src_strides) = permuted_view(self.shape(*a), axes);
                if let Some(ga) = self.acc(grads, *a) {
                    let zeros = vec![0; out_shape.len()];
                    for_each_offset2(&out_shape, &src_strides, &zeros, |o, is, _| ga[is] += g[o]);
                }
            }
            &Op::SumAll(a) => {
                if let Some(ga) = self.acc(grads, a) {
                    ga.iter_mut().for_each(|t| *t += g[0]);
                }
            }
            &Op::MeanAll(a) => {
                let n = self.value(a).len() as f64;
                if let Some(ga) = self.acc(grads, a) {
                    ga.iter_mut().for_each(|t| *t += g[0] / n);
                }
            }
            &Op::SumLast(a) => {
                let c = *self.shape(a).last().expect("rank");
                if let Some(ga) = self.acc(grads, a) {
                    for (row, gi) in ga.chunks_mut(c).zip(g) {
                        row.iter_mut().for_each(|t| *t += gi);
                    }
                }
            }
            &Op::RsqrtOrZero(a) => {
                let x = self.value(a).data();
                if let Some(ga) = self.acc(grads, a) {
                    for ((t, gi), xi) in ga.iter_mut().zip(g).zip(x) {
                        if *xi > 0.0 {
                            *t += gi * -0.5 * xi.powf(-1.5);
                        }
                    }
                }
            }
        }
    }
}

fn sign_of(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn permuted_view(shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let st = strides(shape);
    (
        axes.iter().map(|&ax| shape[ax]).collect(),
        axes.iter().map(|&ax| st[ax]).collect(),
    )
}

struct MatMulGeometry {
    m: usize,
    k: usize,
    n: usize,
    batch: Vec<usize>,
    a_strides: Vec<usize>,
    b_strides: Vec<usize>,
    out_shape: Vec<usize>,
}

impl MatMulGeometry {
    fn new(sa: &[usize], sb: &[usize]) -> Option<Self> {
        if sa.len() < 2 || sb.len() < 2 {
            return None;
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return None;
        }
        let ba = &sa[..sa.len() - 2];
        let bb = &sb[..sb.len() - 2];
        let batch = broadcast_shape(ba, bb)?;
        let a_strides = broadcast_strides(ba, &batch)
            .into_iter()
            .map(|s| s * m * k)
            .collect();
        let b_strides = broadcast_strides(bb, &batch)
            .into_iter()
            .map(|s| s * k * n)
            .collect();
        let mut out_shape = batch.clone();
        out_shape.extend([m, n]);
        Some(Self {
            m,
            k,
            n,
            batch,
            a_strides,
            b_strides,
            out_shape,
        })
    }

    /// Calls `f(out_offset, a_offset, b_offset)` for every batch entry.
    fn for_each_batch(&self, mut f: impl FnMut(usize, usize, usize)) {
        let mn = self.m * self.n;
        for_each_offset2(&self.batch, &self.a_strides, &self.b_strides, |o, oa, ob| {
            f(o * mn, oa, ob)
        });
    }
}
