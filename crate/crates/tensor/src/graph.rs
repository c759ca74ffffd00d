//! Reverse-mode automatic differentiation over a linear tape.
//!
//! A [`Graph`] is built fresh for every forward pass. Nodes hold their
//! forward value; gradients are produced by [`Graph::backward`] and can be
//! accumulated into a [`ParamStore`].

use std::collections::HashMap;

use crate::kernels;
use crate::{ParamId, ParamStore, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// A differentiable operation defined outside this crate.
pub trait CustomOp<T: Scalar> {
    fn forward(&self, inputs: &[&Tensor<T>]) -> Tensor<T>;

    /// Vector-Jacobian product for each input (`None` for non-differentiable inputs).
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
    ) -> Vec<Option<Tensor<T>>>;
}

enum Op<T: Scalar> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Relu(Var),
    LeakyRelu(Var, T),
    Sigmoid(Var),
    Tanh(Var),
    Softplus(Var),
    Abs(Var),
    Square(Var),
    Sqrt(Var),
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    MatMul(Var, Var),
    AddRowBias(Var, Var),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: (usize, usize),
    },
    Upsample2(Var),
    AvgPool2(Var),
    GlobalAvgPool(Var),
    BroadcastSpatial(Var),
    Concat(Vec<Var>),
    Reshape(Var),
    Rows(Var, usize),
    Custom(Box<dyn CustomOp<T>>, Vec<Var>),
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Input whose gradient is wanted (used for input-gradient checks).
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Loads a parameter; repeated calls with the same id share one node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Leaf, !store.is_frozen(id));
        self.params.insert(id, v);
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let v = self.value(a).map(|x| x * s);
        let rg = self.rg(a);
        self.push(v, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        let v = self.value(a).map(|x| x + s);
        let rg = self.rg(a);
        self.push(v, Op::AddScalar(a), rg)
    }

    /// `1 - a`
    pub fn one_minus(&mut self, a: Var) -> Var {
        let n = self.scale(a, -T::one());
        self.add_scalar(n, T::one())
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(T::zero()));
        let rg = self.rg(a);
        self.push(v, Op::Relu(a), rg)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        let v = self.value(a).map(|x| if x > T::zero() { x } else { x * slope });
        let rg = self.rg(a);
        self.push(v, Op::LeakyRelu(a, slope), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(v, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.tanh());
        let rg = self.rg(a);
        self.push(v, Op::Tanh(a), rg)
    }

    /// `ln(1 + e^a)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(softplus);
        let rg = self.rg(a);
        self.push(v, Op::Softplus(a), rg)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.abs());
        let rg = self.rg(a);
        self.push(v, Op::Abs(a), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        let rg = self.rg(a);
        self.push(v, Op::Square(a), rg)
    }

    /// Square root; the derivative at 0 is taken as 0.
    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.sqrt());
        let rg = self.rg(a);
        self.push(v, Op::Sqrt(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(v, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).mean());
        let rg = self.rg(a);
        self.push(v, Op::Mean(a), rg)
    }

    /// Sums over the last axis.
    pub fn sum_last(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let last = *t.shape().last().expect("sum_last on scalar");
        let mut shape = t.shape()[..t.shape().len() - 1].to_vec();
        if shape.is_empty() {
            shape.push(1);
        }
        let data = t.data().chunks(last).map(|c| c.iter().copied().sum()).collect();
        let rg = self.rg(a);
        self.push(Tensor::from_vec(&shape, data), Op::SumLast(a), rg)
    }

    /// Mean absolute difference, the per-element L1 loss.
    pub fn l1(&mut self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        let d = self.abs(d);
        self.mean(d)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::MatMul(a, b), rg)
    }

    /// `x[N, M] + b[M]` broadcast over rows.
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Var {
        let xt = self.value(x);
        let bt = self.value(b);
        let m = bt.numel();
        assert_eq!(*xt.shape().last().unwrap(), m, "row bias width");
        let mut out = xt.clone();
        for row in out.data_mut().chunks_mut(m) {
            for (o, &bb) in row.iter_mut().zip(bt.data()) {
                *o += bb;
            }
        }
        let rg = self.rg(x) || self.rg(b);
        self.push(out, Op::AddRowBias(x, b), rg)
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: (usize, usize),
    ) -> Var {
        let v = kernels::conv2d_forward(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            stride,
            pad,
        );
        let rg = self.rg(input) || self.rg(weight) || bias.is_some_and(|b| self.rg(b));
        self.push(
            v,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            },
            rg,
        )
    }

    /// Nearest-neighbour 2x upsampling of a `[C,H,W]` map.
    pub fn upsample2(&mut self, a: Var) -> Var {
        let v = kernels::upsample2_forward(self.value(a));
        let rg = self.rg(a);
        self.push(v, Op::Upsample2(a), rg)
    }

    pub fn avgpool2(&mut self, a: Var) -> Var {
        let v = kernels::avgpool2_forward(self.value(a));
        let rg = self.rg(a);
        self.push(v, Op::AvgPool2(a), rg)
    }

    /// `[C, ...]` to `[C]` by averaging everything after the first axis.
    pub fn global_avg_pool(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let c = t.dim(0);
        let n = t.numel() / c;
        let inv = T::one() / T::from_usize(n).unwrap();
        let data = t.data().chunks(n).map(|ch| ch.iter().copied().sum::<T>() * inv).collect();
        let rg = self.rg(a);
        self.push(Tensor::from_vec(&[c], data), Op::GlobalAvgPool(a), rg)
    }

    /// `[C]` (or any tensor with C elements) to `[C, H, W]`.
    pub fn broadcast_spatial(&mut self, a: Var, h: usize, w: usize) -> Var {
        let t = self.value(a);
        let c = t.numel();
        let mut out = Vec::with_capacity(c * h * w);
        for &x in t.data() {
            out.extend(std::iter::repeat_n(x, h * w));
        }
        let rg = self.rg(a);
        self.push(Tensor::from_vec(&[c, h, w], out), Op::BroadcastSpatial(a), rg)
    }

    /// Concatenation along the first axis.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let first = self.value(parts[0]).shape().to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            assert_eq!(
                &t.shape()[1..],
                &first[1..],
                "concat: trailing shapes differ ({:?} vs {:?})",
                t.shape(),
                first
            );
            lead += t.dim(0);
            data.extend_from_slice(t.data());
        }
        let mut shape = first;
        shape[0] = lead;
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Tensor::from_vec(&shape, data), Op::Concat(parts.to_vec()), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let v = self.value(a).clone().reshape(shape);
        let rg = self.rg(a);
        self.push(v, Op::Reshape(a), rg)
    }

    /// Rows `start..start+len` of the first axis.
    pub fn rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let t = self.value(a);
        let inner = t.numel() / t.dim(0);
        assert!(start + len <= t.dim(0), "rows out of range");
        let mut shape = t.shape().to_vec();
        shape[0] = len;
        let data = t.data()[start * inner..(start + len) * inner].to_vec();
        let rg = self.rg(a);
        self.push(Tensor::from_vec(&shape, data), Op::Rows(a, start), rg)
    }

    pub fn custom(&mut self, op: Box<dyn CustomOp<T>>, inputs: &[Var]) -> Var {
        let v = {
            let ins: Vec<&Tensor<T>> = inputs.iter().map(|&i| self.value(i)).collect();
            op.forward(&ins)
        };
        let rg = inputs.iter().any(|&i| self.rg(i));
        self.push(v, Op::Custom(op, inputs.to_vec()), rg)
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.value(loss).numel(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_vec(self.value(loss).shape(), vec![T::one()]));
        let mut kept: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                kept[idx] = Some(g);
            }
        }
        Gradients { grads: kept }
    }

    fn propagate(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        let mut send = |v: Var, t: Tensor<T>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    send(*a, g.zip_map(bv, |x, y| x * y));
                }
                if self.rg(*b) {
                    send(*b, g.zip_map(av, |x, y| x * y));
                }
            }
            Op::Scale(a, s) => {
                let s = *s;
                send(*a, g.map(|x| x * s));
            }
            Op::AddScalar(a) => send(*a, g.clone()),
            Op::Relu(a) => {
                send(*a, g.zip_map(self.value(*a), |gg, x| if x > T::zero() { gg } else { T::zero() }));
            }
            Op::LeakyRelu(a, s) => {
                let s = *s;
                send(*a, g.zip_map(self.value(*a), |gg, x| if x > T::zero() { gg } else { gg * s }));
            }
            Op::Sigmoid(a) => send(*a, g.zip_map(out, |gg, y| gg * y * (T::one() - y))),
            Op::Tanh(a) => send(*a, g.zip_map(out, |gg, y| gg * (T::one() - y * y))),
            Op::Softplus(a) => send(*a, g.zip_map(self.value(*a), |gg, x| gg * sigmoid(x))),
            Op::Abs(a) => send(*a, g.zip_map(self.value(*a), |gg, x| gg * sign(x))),
            Op::Square(a) => {
                let two = T::one() + T::one();
                send(*a, g.zip_map(self.value(*a), |gg, x| gg * two * x));
            }
            Op::Sqrt(a) => {
                let half = T::from_f64(0.5).unwrap();
                send(
                    *a,
                    g.zip_map(out, |gg, y| if y > T::zero() { gg * half / y } else { T::zero() }),
                );
            }
            Op::Sum(a) => {
                let s = g.item();
                send(*a, Tensor::full(self.shape(*a), s));
            }
            Op::Mean(a) => {
                let n = T::from_usize(self.value(*a).numel()).unwrap();
                send(*a, Tensor::full(self.shape(*a), g.item() / n));
            }
            Op::SumLast(a) => {
                let shape = self.shape(*a).to_vec();
                let last = *shape.last().unwrap();
                let mut d = Vec::with_capacity(g.numel() * last);
                for &x in g.data() {
                    d.extend(std::iter::repeat_n(x, last));
                }
                send(*a, Tensor::from_vec(&shape, d));
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.dim(0), av.dim(1), bv.dim(1));
                if self.rg(*a) {
                    let mut da = vec![T::zero(); m * k];
                    T::gemm(m, n, k, T::one(), g.data(), false, bv.data(), true, T::zero(), &mut da);
                    send(*a, Tensor::from_vec(&[m, k], da));
                }
                if self.rg(*b) {
                    let mut db = vec![T::zero(); k * n];
                    T::gemm(k, m, n, T::one(), av.data(), true, g.data(), false, T::zero(), &mut db);
                    send(*b, Tensor::from_vec(&[k, n], db));
                }
            }
            Op::AddRowBias(x, b) => {
                send(*x, g.clone());
                if self.rg(*b) {
                    let m = self.value(*b).numel();
                    let mut db = vec![T::zero(); m];
                    for row in g.data().chunks(m) {
                        for (d, &r) in db.iter_mut().zip(row) {
                            *d += r;
                        }
                    }
                    send(*b, Tensor::from_vec(self.shape(*b), db));
                }
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            } => {
                let need = (
                    self.rg(*input),
                    self.rg(*weight),
                    bias.is_some_and(|b| self.rg(b)),
                );
                let (di, dw, db) = kernels::conv2d_backward(
                    self.value(*input),
                    self.value(*weight),
                    g,
                    *stride,
                    *pad,
                    need,
                );
                if let Some(t) = di {
                    send(*input, t);
                }
                if let Some(t) = dw {
                    send(*weight, t);
                }
                if let (Some(t), Some(b)) = (db, bias) {
                    send(*b, t);
                }
            }
            Op::Upsample2(a) => send(*a, kernels::upsample2_backward(g)),
            Op::AvgPool2(a) => send(*a, kernels::avgpool2_backward(g, self.shape(*a))),
            Op::GlobalAvgPool(a) => {
                let shape = self.shape(*a).to_vec();
                let n = self.value(*a).numel() / shape[0];
                let inv = T::one() / T::from_usize(n).unwrap();
                let mut d = Vec::with_capacity(n * shape[0]);
                for &x in g.data() {
                    d.extend(std::iter::repeat_n(x * inv, n));
                }
                send(*a, Tensor::from_vec(&shape, d));
            }
            Op::BroadcastSpatial(a) => {
                let c = self.value(*a).numel();
                let hw = g.numel() / c;
                let d = g.data().chunks(hw).map(|ch| ch.iter().copied().sum()).collect();
                send(*a, Tensor::from_vec(self.shape(*a), d));
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    if self.rg(p) {
                        send(p, Tensor::from_vec(self.shape(p), g.data()[offset..offset + n].to_vec()));
                    }
                    offset += n;
                }
            }
            Op::Reshape(a) => send(*a, g.clone().reshape(self.shape(*a))),
            Op::Rows(a, start) => {
                let av = self.value(*a);
                let inner = av.numel() / av.dim(0);
                let mut d = Tensor::zeros(av.shape());
                d.data_mut()[start * inner..start * inner + g.numel()].copy_from_slice(g.data());
                send(*a, d);
            }
            Op::Custom(op, inputs) => {
                let ins: Vec<&Tensor<T>> = inputs.iter().map(|&i| self.value(i)).collect();
                let gs = op.backward(&ins, out, g);
                for (&v, gi) in inputs.iter().zip(gs) {
                    if let Some(t) = gi {
                        send(v, t);
                    }
                }
            }
        }
    }
}

/// Gradients of graph leaves after [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Adds the gradient of every parameter used in `graph` into `store`.
    pub fn accumulate(&self, graph: &Graph<T>, store: &mut ParamStore<T>) {
        for (&id, &v) in &graph.params {
            if !store.owns(id) {
                continue;
            }
            if let Some(g) = self.wrt(v) {
                store.accumulate_grad(id, g);
            }
        }
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn softplus<T: Scalar>(x: T) -> T {
    // ln(1 + e^x) = max(x, 0) + ln(1 + e^{-|x|})
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn sign<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}
