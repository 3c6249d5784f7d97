use rand::Rng;

use super::{Mode, Tensor};
use crate::error::{Error, Result};

/// Probabilities are clamped here before taking logarithms.
pub const LOG_FLOOR: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { input: Var, kernels: Var, bias: Var },
    MaxPool2d { input: Var, argmax: Vec<usize> },
    Dense { input: Var, weight: Var, bias: Option<Var> },
    Relu(Var),
    Softplus(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    Dropout { input: Var, mask: Vec<f64> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Reshape(Var),
    Stack(Vec<Var>),
    NegWeightedLog { probs: Var, weights: Vec<f64>, scale: f64 },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::MaxPool2d { .. } => "max_pool2d",
            Op::Dense { .. } => "dense",
            Op::Relu(_) => "relu",
            Op::Softplus(_) => "softplus",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Softmax(_) => "softmax",
            Op::Dropout { .. } => "dropout",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Sum(_) => "sum",
            Op::Reshape(_) => "reshape",
            Op::Stack(_) => "stack",
            Op::NegWeightedLog { .. } => "neg_weighted_log",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Wengert list of executed operations.
///
/// Nodes are appended in execution order, so walking the list backwards is a
/// reverse topological order. Gradients of intermediate nodes are released
/// during [`Tape::backward`]; leaf gradients are kept and can be read with
/// [`Tape::grad`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn clamped_ln(p: f64) -> f64 {
    p.max(LOG_FLOOR).ln()
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

    /// Drop every node recorded at or after position `len`. Handles to
    /// dropped nodes must not be used afterwards.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
        self.grads.truncate(len);
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last [`backward`](Self::backward) call with respect to
    /// a leaf. `None` for leaves that do not require gradients.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::new(self.nodes[v.0].value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    /// First node (in execution order) holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<(Var, &'static str)> {
        self.nodes
            .iter()
            .position(|n| !n.value.is_finite())
            .map(|i| (Var(i), self.nodes[i].op.name()))
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(src.shape().to_vec(), data).expect("same shape");
        let rg = self.any_grad(&[x]);
        self.push(value, op, rg)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::dim(op, "operand shape", format!("{sa:?}"), format!("{sb:?}")));
        }
        Ok(())
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(op.name(), a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape().to_vec(), data).expect("same shape");
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    /// Valid (unpadded) stride-1 cross-correlation of `input[C_in, H, W]` with
    /// `kernels[C_out, C_in, k, k]`, plus a per-channel bias.
    pub fn conv2d(&mut self, input: Var, kernels: Var, bias: Var) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(kernels), self.value(bias));
        if x.rank() != 3 {
            return Err(Error::dim("conv2d", "input rank", 3, x.rank()));
        }
        if w.rank() != 4 {
            return Err(Error::dim("conv2d", "kernel rank", 4, w.rank()));
        }
        let (c_in, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (c_out, kc, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
        if kc != c_in {
            return Err(Error::dim("conv2d", "input channels (axis 0)", kc, c_in));
        }
        if kh != kw {
            return Err(Error::dim("conv2d", "kernel width (axis 3)", kh, kw));
        }
        if kh > h {
            return Err(Error::dim("conv2d", "input height (axis 1)", format!(">= {kh}"), h));
        }
        if kw > wd {
            return Err(Error::dim("conv2d", "input width (axis 2)", format!(">= {kw}"), wd));
        }
        if b.shape() != [c_out] {
            return Err(Error::dim("conv2d", "bias length", c_out, format!("{:?}", b.shape())));
        }
        let k = kh;
        let (oh, ow) = (h - k + 1, wd - k + 1);
        let (xd, wdat, bd) = (x.data(), w.data(), b.data());
        let mut out = vec![0.0; c_out * oh * ow];
        for co in 0..c_out {
            let plane = &mut out[co * oh * ow..(co + 1) * oh * ow];
            plane.fill(bd[co]);
            for ci in 0..c_in {
                let xin = &xd[ci * h * wd..(ci + 1) * h * wd];
                let kern = &wdat[(co * c_in + ci) * k * k..(co * c_in + ci + 1) * k * k];
                for u in 0..k {
                    for v in 0..k {
                        let kv = kern[u * k + v];
                        for i in 0..oh {
                            let row = &xin[(i + u) * wd + v..(i + u) * wd + v + ow];
                            let dst = &mut plane[i * ow..(i + 1) * ow];
                            for (d, &s) in dst.iter_mut().zip(row) {
                                *d += kv * s;
                            }
                        }
                    }
                }
            }
        }
        let value = Tensor::new(vec![c_out, oh, ow], out)?;
        let rg = self.any_grad(&[input, kernels, bias]);
        Ok(self.push(value, Op::Conv2d { input, kernels, bias }, rg))
    }

    /// Max over disjoint `p x p` windows of `input[C, H, W]`.
    pub fn max_pool2d(&mut self, input: Var, p: usize) -> Result<Var> {
        let x = self.value(input);
        if x.rank() != 3 {
            return Err(Error::dim("max_pool2d", "input rank", 3, x.rank()));
        }
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        if p == 0 || h % p != 0 {
            return Err(Error::dim("max_pool2d", "height (axis 1)", format!("multiple of {p}"), h));
        }
        if w % p != 0 {
            return Err(Error::dim("max_pool2d", "width (axis 2)", format!("multiple of {p}"), w));
        }
        let (oh, ow) = (h / p, w / p);
        let xd = x.data();
        let mut out = Vec::with_capacity(c * oh * ow);
        let mut argmax = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = ch * h * w + (i * p) * w + j * p;
                    for u in 0..p {
                        for v in 0..p {
                            let idx = ch * h * w + (i * p + u) * w + j * p + v;
                            if xd[idx] > xd[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(xd[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::new(vec![c, oh, ow], out)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(value, Op::MaxPool2d { input, argmax }, rg))
    }

    /// `weight[d_out, d_in] * input[d_in] + bias[d_out]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        self.affine(input, weight, Some(bias))
    }

    /// `weight[d_out, d_in] * input[d_in]`.
    pub fn matvec(&mut self, weight: Var, input: Var) -> Result<Var> {
        self.affine(input, weight, None)
    }

    fn affine(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let (x, w) = (self.value(input), self.value(weight));
        if x.rank() != 1 {
            return Err(Error::dim("dense", "input rank", 1, x.rank()));
        }
        if w.rank() != 2 {
            return Err(Error::dim("dense", "weight rank", 2, w.rank()));
        }
        let (d_out, d_in) = (w.shape()[0], w.shape()[1]);
        if x.numel() != d_in {
            return Err(Error::dim("dense", "input length (weight axis 1)", d_in, x.numel()));
        }
        let mut out: Vec<f64> = w
            .data()
            .chunks_exact(d_in)
            .map(|row| row.iter().zip(x.data()).map(|(a, b)| a * b).sum())
            .collect();
        if let Some(b) = bias {
            let b = self.value(b);
            if b.shape() != [d_out] {
                return Err(Error::dim("dense", "bias length", d_out, format!("{:?}", b.shape())));
            }
            for (o, &bv) in out.iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let rg = self.any_grad(&deps);
        Ok(self.push(Tensor::vector(out), Op::Dense { input, weight, bias }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    /// `ln(1 + e^x)`, overflow safe.
    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, Op::Softplus(x), softplus)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    /// Softmax over a vector, max-subtracted.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        if v.rank() != 1 {
            return Err(Error::dim("softmax", "input rank", 1, v.rank()));
        }
        let max = v.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut e: Vec<f64> = v.data().iter().map(|&a| (a - max).exp()).collect();
        let z: f64 = e.iter().sum();
        e.iter_mut().for_each(|a| *a /= z);
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::vector(e), Op::Softmax(x), rg))
    }

    /// Inverted dropout. Identity in eval mode or at rate 0; otherwise each
    /// entry is zeroed with probability `rate` and survivors are scaled by
    /// `1 / (1 - rate)`.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f64,
        rng: &mut R,
        mode: Mode,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let v = self.value(x);
        let mask: Vec<f64> = (0..v.numel())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let data = v.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let value = Tensor::new(v.shape().to_vec(), data)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Dropout { input: x, mask }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        self.unary(x, Op::Scale(x, factor), |v| v * factor)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Stack equal-length vectors into a `[rows, len]` matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        let first = rows
            .first()
            .ok_or_else(|| Error::Usage("stack of zero rows".into()))?;
        let len = self.value(*first).numel();
        let mut data = Vec::with_capacity(rows.len() * len);
        for (i, &r) in rows.iter().enumerate() {
            let v = self.value(r);
            if v.rank() != 1 || v.numel() != len {
                return Err(Error::dim("stack", format!("row {i}"), len, format!("{:?}", v.shape())));
            }
            data.extend_from_slice(v.data());
        }
        let value = Tensor::new(vec![rows.len(), len], data)?;
        let rg = self.any_grad(rows);
        Ok(self.push(value, Op::Stack(rows.to_vec()), rg))
    }

    /// `-scale * sum_k weights[k] * ln(max(probs[k], 1e-12))`.
    ///
    /// Cross-entropy against one-hot targets, the consistency loss and the
    /// confidence constraint are all instances of this op.
    pub fn neg_weighted_log(&mut self, probs: Var, weights: Vec<f64>, scale: f64) -> Result<Var> {
        let p = self.value(probs);
        if p.numel() != weights.len() {
            return Err(Error::dim("neg_weighted_log", "weights length", p.numel(), weights.len()));
        }
        let s: f64 = p
            .data()
            .iter()
            .zip(&weights)
            .filter(|(_, &w)| w != 0.0)
            .map(|(&pv, &w)| w * clamped_ln(pv))
            .sum();
        let rg = self.any_grad(&[probs]);
        Ok(self.push(
            Tensor::scalar(-scale * s),
            Op::NegWeightedLog {
                probs,
                weights,
                scale,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`. Gradients reachable by several paths
    /// are summed. Afterwards every leaf that requires gradients has one.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.grads.iter_mut().for_each(|g| *g = None);
        if self.nodes[loss.0].requires_grad {
            self.grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            let nodes = &self.nodes;
            let grads = &mut self.grads;
            let out = &nodes[i].value;
            let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
                if !nodes[v.0].requires_grad {
                    return;
                }
                let buf = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()]);
                f(buf);
            };
            match &nodes[i].op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Conv2d { input, kernels, bias } => {
                    let (x, w) = (&nodes[input.0].value, &nodes[kernels.0].value);
                    let (c_in, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                    let (c_out, k) = (w.shape()[0], w.shape()[2]);
                    let (oh, ow) = (out.shape()[1], out.shape()[2]);
                    acc(*bias, &mut |db| {
                        for co in 0..c_out {
                            db[co] += g[co * oh * ow..(co + 1) * oh * ow].iter().sum::<f64>();
                        }
                    });
                    acc(*kernels, &mut |dw| {
                        for co in 0..c_out {
                            let gp = &g[co * oh * ow..(co + 1) * oh * ow];
                            for ci in 0..c_in {
                                let xin = &x.data()[ci * h * wd..(ci + 1) * h * wd];
                                for u in 0..k {
                                    for v in 0..k {
                                        let mut s = 0.0;
                                        for i2 in 0..oh {
                                            let row = &xin[(i2 + u) * wd + v..(i2 + u) * wd + v + ow];
                                            s += row
                                                .iter()
                                                .zip(&gp[i2 * ow..(i2 + 1) * ow])
                                                .map(|(a, b)| a * b)
                                                .sum::<f64>();
                                        }
                                        dw[((co * c_in + ci) * k + u) * k + v] += s;
                                    }
                                }
                            }
                        }
                    });
                    acc(*input, &mut |dx| {
                        for co in 0..c_out {
                            let gp = &g[co * oh * ow..(co + 1) * oh * ow];
                            for ci in 0..c_in {
                                let kern = &w.data()[(co * c_in + ci) * k * k..(co * c_in + ci + 1) * k * k];
                                let dxin = &mut dx[ci * h * wd..(ci + 1) * h * wd];
                                for u in 0..k {
                                    for v in 0..k {
                                        let kv = kern[u * k + v];
                                        for i2 in 0..oh {
                                            let dst = &mut dxin[(i2 + u) * wd + v..(i2 + u) * wd + v + ow];
                                            for (d, &s) in dst.iter_mut().zip(&gp[i2 * ow..(i2 + 1) * ow]) {
                                                *d += kv * s;
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    });
                }
                Op::MaxPool2d { input, argmax } => acc(*input, &mut |dx| {
                    for (&src, &gv) in argmax.iter().zip(&g) {
                        dx[src] += gv;
                    }
                }),
                Op::Dense { input, weight, bias } => {
                    let (x, w) = (&nodes[input.0].value, &nodes[weight.0].value);
                    let d_in = x.numel();
                    if let Some(b) = bias {
                        acc(*b, &mut |db| db.iter_mut().zip(&g).for_each(|(d, gv)| *d += gv));
                    }
                    acc(*weight, &mut |dw| {
                        for (row, &gv) in dw.chunks_exact_mut(d_in).zip(&g) {
                            if gv != 0.0 {
                                row.iter_mut().zip(x.data()).for_each(|(d, xv)| *d += gv * xv);
                            }
                        }
                    });
                    acc(*input, &mut |dx| {
                        for (row, &gv) in w.data().chunks_exact(d_in).zip(&g) {
                            if gv != 0.0 {
                                dx.iter_mut().zip(row).for_each(|(d, wv)| *d += gv * wv);
                            }
                        }
                    });
                }
                Op::Relu(x) => {
                    let xv = nodes[x.0].value.data();
                    acc(*x, &mut |dx| {
                        for ((d, &gv), &a) in dx.iter_mut().zip(&g).zip(xv) {
                            if a > 0.0 {
                                *d += gv;
                            }
                        }
                    })
                }
                Op::Softplus(x) => {
                    let xv = nodes[x.0].value.data();
                    acc(*x, &mut |dx| {
                        for ((d, &gv), &a) in dx.iter_mut().zip(&g).zip(xv) {
                            *d += gv * sigmoid(a);
                        }
                    })
                }
                Op::Sigmoid(x) => acc(*x, &mut |dx| {
                    for ((d, &gv), &y) in dx.iter_mut().zip(&g).zip(out.data()) {
                        *d += gv * y * (1.0 - y);
                    }
                }),
                Op::Tanh(x) => acc(*x, &mut |dx| {
                    for ((d, &gv), &y) in dx.iter_mut().zip(&g).zip(out.data()) {
                        *d += gv * (1.0 - y * y);
                    }
                }),
                Op::Softmax(x) => {
                    let y = out.data();
                    let dot: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                    acc(*x, &mut |dx| {
                        for ((d, &gv), &yv) in dx.iter_mut().zip(&g).zip(y) {
                            *d += yv * (gv - dot);
                        }
                    })
                }
                Op::Dropout { input, mask } => acc(*input, &mut |dx| {
                    for ((d, &gv), &m) in dx.iter_mut().zip(&g).zip(mask) {
                        *d += gv * m;
                    }
                }),
                Op::Add(a, b) => {
                    acc(*a, &mut |d| d.iter_mut().zip(&g).for_each(|(d, gv)| *d += gv));
                    acc(*b, &mut |d| d.iter_mut().zip(&g).for_each(|(d, gv)| *d += gv));
                }
                Op::Sub(a, b) => {
                    acc(*a, &mut |d| d.iter_mut().zip(&g).for_each(|(d, gv)| *d += gv));
                    acc(*b, &mut |d| d.iter_mut().zip(&g).for_each(|(d, gv)| *d -= gv));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    acc(*a, &mut |d| {
                        for ((d, &gv), &o) in d.iter_mut().zip(&g).zip(bv) {
                            *d += gv * o;
                        }
                    });
                    acc(*b, &mut |d| {
                        for ((d, &gv), &o) in d.iter_mut().zip(&g).zip(av) {
                            *d += gv * o;
                        }
                    });
                }
                Op::Scale(x, f) => acc(*x, &mut |d| d.iter_mut().zip(&g).for_each(|(d, gv)| *d += gv * f)),
                Op::Sum(x) => acc(*x, &mut |d| d.iter_mut().for_each(|d| *d += g[0])),
                Op::Reshape(x) => acc(*x, &mut |d| d.iter_mut().zip(&g).for_each(|(d, gv)| *d += gv)),
                Op::Stack(rows) => {
                    let len = out.shape()[1];
                    for (r, &v) in rows.iter().enumerate() {
                        acc(v, &mut |d| {
                            d.iter_mut()
                                .zip(&g[r * len..(r + 1) * len])
                                .for_each(|(d, gv)| *d += gv)
                        });
                    }
                }
                Op::NegWeightedLog { probs, weights, scale } => {
                    let p = nodes[probs.0].value.data();
                    acc(*probs, &mut |d| {
                        for ((d, &w), &pv) in d.iter_mut().zip(weights).zip(p) {
                            if w != 0.0 && pv > LOG_FLOOR {
                                *d -= g[0] * scale * w / pv;
                            }
                        }
                    })
                }
            }
        }
        for (node, grad) in self.nodes.iter().zip(self.grads.iter_mut()) {
            if node.requires_grad && matches!(node.op, Op::Leaf) && grad.is_none() {
                *grad = Some(vec![0.0; node.value.numel()]);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn conv_zero_input_gives_bias() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 3, 3]));
        let k = tape.constant(t(&[1, 1, 2, 2], &[0.3, -1.0, 2.0, 0.7]));
        let b = tape.constant(t(&[1], &[0.5]));
        let y = tape.conv2d(x, k, b).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 2, 2]);
        assert!(tape.value(y).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn conv_unit_kernel_is_identity() {
        let data: Vec<f64> = (0..12).map(|i| i as f64 * 0.25 - 1.0).collect();
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 3, 4], &data));
        let k = tape.constant(t(&[1, 1, 1, 1], &[1.0]));
        let b = tape.constant(t(&[1], &[0.0]));
        let y = tape.conv2d(x, k, b).unwrap();
        assert_eq!(tape.value(y).data(), &data[..]);
    }

    #[test]
    fn conv_rejects_bad_shapes() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 2, 2]));
        let k = tape.constant(Tensor::zeros(&[1, 1, 3, 3]));
        let b = tape.constant(Tensor::zeros(&[1]));
        let err = tape.conv2d(x, k, b).unwrap_err().to_string();
        assert!(err.contains("axis 1"), "{err}");
        let k2 = tape.constant(Tensor::zeros(&[1, 2, 1, 1]));
        let err = tape.conv2d(x, k2, b).unwrap_err().to_string();
        assert!(err.contains("axis 0"), "{err}");
    }

    #[test]
    fn pool_basic_and_constant() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let y = tape.max_pool2d(x, 2).unwrap();
        assert_eq!(tape.value(y).data(), &[4.0]);
        let c = tape.constant(Tensor::full(&[2, 4, 4], 1.5));
        let y = tape.max_pool2d(c, 2).unwrap();
        assert_eq!(tape.value(y).shape(), &[2, 2, 2]);
        assert!(tape.value(y).data().iter().all(|&v| v == 1.5));
        let odd = tape.constant(Tensor::zeros(&[1, 3, 4]));
        assert!(matches!(tape.max_pool2d(odd, 2), Err(Error::Dimension { .. })));
    }

    #[test]
    fn pool_ties_route_gradient_to_first_cell() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::full(&[1, 2, 2], 3.0));
        let y = tape.max_pool2d(x, 2).unwrap();
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn dense_identity_and_bias() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![1.5, -2.0]));
        let eye = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let zero_b = tape.constant(Tensor::zeros(&[2]));
        let y = tape.dense(x, eye, zero_b).unwrap();
        assert_eq!(tape.value(y).data(), &[1.5, -2.0]);
        let zw = tape.constant(Tensor::zeros(&[3, 2]));
        let b = tape.constant(Tensor::vector(vec![0.1, 0.2, 0.3]));
        let y = tape.dense(x, zw, b).unwrap();
        assert_eq!(tape.value(y).data(), &[0.1, 0.2, 0.3]);
        let bad = tape.constant(Tensor::zeros(&[3, 4]));
        assert!(tape.dense(x, bad, b).is_err());
    }

    #[test]
    fn activations_analytic_values() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.0, -3.0, 1e4, -1e4]));
        let sp = tape.softplus(x);
        let v = tape.value(sp).data();
        assert!((v[0] - 2f64.ln()).abs() < 1e-15);
        assert!(v[1] > 0.0 && v[1] < 0.05);
        assert_eq!(v[2], 1e4);
        assert!(v[3] >= 0.0 && v[3].is_finite());
        let r = tape.relu(x);
        assert_eq!(tape.value(r).data(), &[0.0, 0.0, 1e4, 0.0]);
    }

    #[test]
    fn softmax_symmetry_and_overflow() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::full(&[6], 3.7));
        let s = tape.softmax(c).unwrap();
        for &p in tape.value(s).data() {
            assert!((p - 1.0 / 6.0).abs() < 1e-15);
        }
        let big = tape.constant(Tensor::vector(vec![1000.0, 0.0]));
        let s = tape.softmax(big).unwrap();
        let v = tape.value(s).data();
        assert!((v[0] - 1.0).abs() < 1e-12 && v[1].abs() < 1e-12);
        let huge = tape.constant(Tensor::vector(vec![1e4, -1e4, 0.0]));
        let s = tape.softmax(huge).unwrap();
        assert!(tape.value(s).is_finite());
    }

    #[test]
    fn dropout_identity_cases_and_bad_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        assert_eq!(tape.dropout(x, 0.0, &mut rng, Mode::Train).unwrap(), x);
        assert_eq!(tape.dropout(x, 0.7, &mut rng, Mode::Eval).unwrap(), x);
        assert!(matches!(
            tape.dropout(x, 1.0, &mut rng, Mode::Train),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn dropout_statistics() {
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let input: Vec<f64> = (0..n).map(|i| 1.0 + (i % 7) as f64 * 0.1).collect();
        let mean_in = input.iter().sum::<f64>() / n as f64;
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(input));
        let y = tape.dropout(x, 0.5, &mut rng, Mode::Train).unwrap();
        let out = tape.value(y).data();
        let survivors = out.iter().filter(|&&v| v != 0.0).count() as f64 / n as f64;
        let mean_out = out.iter().sum::<f64>() / n as f64;
        assert!((survivors - 0.5).abs() < 0.01, "{survivors}");
        assert!((mean_out - mean_in).abs() < 0.02, "{mean_out} vs {mean_in}");
    }

    #[test]
    fn backward_basic_cases() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, -2.0, 0.5]));
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);

        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let sq = tape.mul(x, x).unwrap();
        tape.backward(sq).unwrap();
        assert_eq!(tape.grad(x).unwrap().item(), 6.0);

        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(0.3));
        let two_x = tape.add(x, x).unwrap();
        tape.backward(two_x).unwrap();
        assert_eq!(tape.grad(x).unwrap().item(), 2.0);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::Usage(_))));
    }

    #[test]
    fn grads_exist_exactly_for_trainable_leaves() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::vector(vec![1.0, 2.0]));
        let unused = tape.param(Tensor::vector(vec![5.0]));
        let c = tape.constant(Tensor::vector(vec![3.0, 4.0]));
        let p = tape.mul(a, c).unwrap();
        let s = tape.sum(p);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(a).unwrap().data(), &[3.0, 4.0]);
        assert_eq!(tape.grad(unused).unwrap().data(), &[0.0]);
        assert!(tape.grad(c).is_none());
    }

    #[test]
    fn weighted_log_clamps() {
        let mut tape = Tape::new();
        let p = tape.param(Tensor::vector(vec![0.0, 1.0]));
        let l = tape.neg_weighted_log(p, vec![1.0, 1.0], 1.0).unwrap();
        assert!((tape.value(l).item() - (-LOG_FLOOR.ln())).abs() < 1e-9);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(p).unwrap().data(), &[0.0, -1.0]);
    }
}
