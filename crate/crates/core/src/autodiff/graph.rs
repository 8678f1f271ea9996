use std::collections::{HashMap, HashSet};
use std::rc::Rc;

use super::kernels as k;
pub use super::kernels::Axis;
use crate::nn::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<S> {
    Leaf,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Maximum(Var, Var),
    Scale(Var, S),
    AddScalar(Var),
    Abs(Var),
    Square(Var),
    Sqrt(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    LeakyRelu(Var, S),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    InstanceNorm(Var, Vec<S>),
    ChannelNorm(Var, Vec<S>),
    Upsample2x(Var),
    AvgPool(Var, usize),
    ConcatChannels(Vec<Var>),
    Warp(Var, Var),
    SumAll(Var),
    SumSpatial(Var),
    SumChannels(Var),
    Gram(Var),
    Diff(Var, Axis),
    SoftmaxXent {
        logits: Var,
        labels: Rc<Vec<usize>>,
        probs: Tensor<S>,
    },
    BceLogits {
        logits: Var,
        targets: Tensor<S>,
    },
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

/// Records tensor operations for reverse-mode differentiation.
///
/// Parameters enter through [`Graph::param`]; each parameter is materialized once per graph.
/// Parameters of frozen stores (see [`Graph::freeze`]) are treated as constants.
pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
    params: HashMap<ParamId, Var>,
    frozen: HashSet<u32>,
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: HashMap::new(),
            frozen: HashSet::new(),
            grads: Vec::new(),
        }
    }

    /// Stops gradients into every parameter of the store with this tag.
    pub fn freeze(&mut self, store_tag: u32) {
        self.frozen.insert(store_tag);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
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

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last [`backward`](Self::backward) target with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Constant input (no gradient).
    pub fn constant(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Input whose gradient is tracked (used by gradient checks).
    pub fn input(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn param(&mut self, store: &ParamStore<S>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let trainable = !self.frozen.contains(&id.store);
        let v = self.push(store.value(id).clone(), Op::Param, trainable);
        self.params.insert(id, v);
        v
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(S, S) -> S, op: Op<S>) -> Var {
        let out = broadcast_binary(self.value(a), self.value(b), f);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// Elementwise maximum; ties send the gradient to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| if x >= y { x } else { y }, Op::Maximum(a, b))
    }

    fn unary(&mut self, a: Var, f: impl Fn(S) -> S, op: Op<S>) -> Var {
        let out = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(out, op, rg)
    }

    pub fn scale(&mut self, a: Var, c: S) -> Var {
        self.unary(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: S) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -S::one());
        self.add_scalar(neg, S::one())
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.abs(), Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.sqrt(), Op::Sqrt(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, k::sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(S::zero()), Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: S) -> Var {
        self.unary(
            a,
            |x| if x > S::zero() { x } else { x * slope },
            Op::LeakyRelu(a, slope),
        )
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let out = k::conv2d_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            stride,
            pad,
        );
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(
            out,
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            },
            rg,
        )
    }

    pub fn instance_norm(&mut self, x: Var) -> Var {
        let (out, inv) = k::instance_norm_forward(self.value(x), S::lit(1e-5));
        let rg = self.rg(x);
        self.push(out, Op::InstanceNorm(x, inv), rg)
    }

    /// Normalizes each spatial position across channels.
    pub fn channel_norm(&mut self, x: Var) -> Var {
        let (out, inv) = k::channel_norm_forward(self.value(x), S::lit(1e-5));
        let rg = self.rg(x);
        self.push(out, Op::ChannelNorm(x, inv), rg)
    }

    pub fn upsample2x(&mut self, x: Var) -> Var {
        let out = k::upsample2x_forward(self.value(x));
        let rg = self.rg(x);
        self.push(out, Op::Upsample2x(x), rg)
    }

    pub fn avg_pool(&mut self, x: Var, size: usize) -> Var {
        let out = k::avg_pool_forward(self.value(x), size);
        let rg = self.rg(x);
        self.push(out, Op::AvgPool(x, size), rg)
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Var {
        let (n, _, h, w) = self.value(parts[0]).dims4();
        let mut c_total = 0;
        for &p in parts {
            let (pn, pc, ph, pw) = self.value(p).dims4();
            assert_eq!((pn, ph, pw), (n, h, w), "concat_channels shape mismatch");
            c_total += pc;
        }
        let hw = h * w;
        let mut data = Vec::with_capacity(n * c_total * hw);
        for b in 0..n {
            for &p in parts {
                let t = self.value(p);
                let pc = t.shape()[1];
                data.extend_from_slice(&t.data()[b * pc * hw..(b + 1) * pc * hw]);
            }
        }
        let out = Tensor::from_vec(&[n, c_total, h, w], data).unwrap();
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(out, Op::ConcatChannels(parts.to_vec()), rg)
    }

    /// Bilinear backward warp of `feat` by `flow` (`N x 2 x H x W`, x then y offsets).
    pub fn warp(&mut self, feat: Var, flow: Var) -> Var {
        let out = k::warp_forward(self.value(feat), self.value(flow));
        let rg = self.rg(feat) || self.rg(flow);
        self.push(out, Op::Warp(feat, flow), rg)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(x);
        self.push(out, Op::SumAll(x), rg)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = S::from_usize(self.value(x).numel()).unwrap();
        let s = self.sum_all(x);
        self.scale(s, S::one() / n)
    }

    /// `N x C x H x W -> N x C x 1 x 1`.
    pub fn sum_spatial(&mut self, x: Var) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let src = self.value(x).data();
        let data = (0..n * c)
            .map(|p| src[p * h * w..(p + 1) * h * w].iter().copied().sum())
            .collect();
        let out = Tensor::from_vec(&[n, c, 1, 1], data).unwrap();
        let rg = self.rg(x);
        self.push(out, Op::SumSpatial(x), rg)
    }

    /// `N x C x H x W -> N x 1 x H x W`.
    pub fn sum_channels(&mut self, x: Var) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let hw = h * w;
        let src = self.value(x).data();
        let mut out = Tensor::zeros(&[n, 1, h, w]);
        for b in 0..n {
            for ch in 0..c {
                for p in 0..hw {
                    out.data_mut()[b * hw + p] += src[(b * c + ch) * hw + p];
                }
            }
        }
        let rg = self.rg(x);
        self.push(out, Op::SumChannels(x), rg)
    }

    pub fn gram(&mut self, x: Var) -> Var {
        let out = k::gram_forward(self.value(x));
        let rg = self.rg(x);
        self.push(out, Op::Gram(x), rg)
    }

    /// Forward differences along one spatial axis; that axis shrinks by one.
    pub fn diff(&mut self, x: Var, axis: Axis) -> Var {
        let out = k::diff_forward(self.value(x), axis);
        let rg = self.rg(x);
        self.push(out, Op::Diff(x, axis), rg)
    }

    /// Mean per-pixel softmax cross-entropy of `logits` (`N x K x H x W`) against labels.
    pub fn softmax_xent(&mut self, logits: Var, labels: Rc<Vec<usize>>) -> Var {
        let (loss, probs) = k::softmax_xent_forward(self.value(logits), &labels);
        let rg = self.rg(logits);
        self.push(
            Tensor::scalar(loss),
            Op::SoftmaxXent {
                logits,
                labels,
                probs,
            },
            rg,
        )
    }

    /// Mean binary cross-entropy of `logits` against targets in `[0, 1]`.
    pub fn bce_logits(&mut self, logits: Var, targets: Tensor<S>) -> Var {
        assert_eq!(self.shape(logits), targets.shape(), "bce target shape");
        let loss = k::bce_logits_forward(self.value(logits), &targets);
        let rg = self.rg(logits);
        self.push(Tensor::scalar(loss), Op::BceLogits { logits, targets }, rg)
    }

    /// Reverse pass from a scalar `loss`. Gradients are readable via [`grad`](Self::grad).
    pub fn backward(&mut self, loss: Var) {
        assert_eq!(self.value(loss).numel(), 1, "backward needs a scalar");
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), S::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(gout) = grads[i].take() else {
                continue;
            };
            for (parent, g) in self.node_backward(i, &gout) {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
            if matches!(self.nodes[i].op, Op::Leaf | Op::Param) {
                grads[i] = Some(gout);
            }
        }
        self.grads = grads;
    }

    /// Adds accumulated parameter gradients into the store's gradient buffers.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore<S>) {
        for (&id, &v) in &self.params {
            if id.store != store.tag() {
                continue;
            }
            if let Some(g) = self.grad(v) {
                store.grad_mut(id).add_assign(g);
            }
        }
    }

    fn node_backward(&self, i: usize, gout: &Tensor<S>) -> Vec<(Var, Tensor<S>)> {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Add(a, b) => {
                out.push((*a, reduce_to_shape(gout, val(*a).shape())));
                out.push((*b, reduce_to_shape(gout, val(*b).shape())));
            }
            Op::Sub(a, b) => {
                out.push((*a, reduce_to_shape(gout, val(*a).shape())));
                let neg = gout.map(|g| -g);
                out.push((*b, reduce_to_shape(&neg, val(*b).shape())));
            }
            Op::Mul(a, b) => {
                if rg(*a) {
                    let ga =
                        broadcast_binary(gout, &expand_to(val(*b), gout.shape()), |g, y| g * y);
                    out.push((*a, reduce_to_shape(&ga, val(*a).shape())));
                }
                if rg(*b) {
                    let gb =
                        broadcast_binary(gout, &expand_to(val(*a), gout.shape()), |g, x| g * x);
                    out.push((*b, reduce_to_shape(&gb, val(*b).shape())));
                }
            }
            Op::Div(a, b) => {
                let bx = expand_to(val(*b), gout.shape());
                if rg(*a) {
                    let ga = gout.zip_map(&bx, |g, y| g / y);
                    out.push((*a, reduce_to_shape(&ga, val(*a).shape())));
                }
                if rg(*b) {
                    // d(a/b)/db = -out / b
                    let q = gout.zip_map(&node.value, |g, o| g * o);
                    let gb = q.zip_map(&bx, |t, y| -t / y);
                    out.push((*b, reduce_to_shape(&gb, val(*b).shape())));
                }
            }
            Op::Maximum(a, b) => {
                let ax = expand_to(val(*a), gout.shape());
                let bx = expand_to(val(*b), gout.shape());
                let mut ga = gout.clone();
                let mut gb = gout.clone();
                for ((ga, gb), (&x, &y)) in ga
                    .data_mut()
                    .iter_mut()
                    .zip(gb.data_mut().iter_mut())
                    .zip(ax.data().iter().zip(bx.data()))
                {
                    if x >= y {
                        *gb = S::zero();
                    } else {
                        *ga = S::zero();
                    }
                }
                out.push((*a, reduce_to_shape(&ga, val(*a).shape())));
                out.push((*b, reduce_to_shape(&gb, val(*b).shape())));
            }
            Op::Scale(a, c) => out.push((*a, gout.map(|g| g * *c))),
            Op::AddScalar(a) => out.push((*a, gout.clone())),
            Op::Abs(a) => out.push((
                *a,
                gout.zip_map(val(*a), |g, x| {
                    if x > S::zero() {
                        g
                    } else if x < S::zero() {
                        -g
                    } else {
                        S::zero()
                    }
                }),
            )),
            Op::Square(a) => out.push((*a, gout.zip_map(val(*a), |g, x| g * (x + x)))),
            Op::Sqrt(a) => out.push((*a, gout.zip_map(&node.value, |g, y| g / (y + y)))),
            Op::Sigmoid(a) => {
                out.push((*a, gout.zip_map(&node.value, |g, y| g * y * (S::one() - y))))
            }
            Op::Tanh(a) => out.push((*a, gout.zip_map(&node.value, |g, y| g * (S::one() - y * y)))),
            Op::Relu(a) => out.push((
                *a,
                gout.zip_map(val(*a), |g, x| if x > S::zero() { g } else { S::zero() }),
            )),
            Op::LeakyRelu(a, slope) => out.push((
                *a,
                gout.zip_map(val(*a), |g, x| if x > S::zero() { g } else { g * *slope }),
            )),
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            } => {
                let (dx, dw, db) =
                    k::conv2d_backward(val(*x), val(*w), gout, *stride, *pad, rg(*x), rg(*w));
                if let Some(dx) = dx {
                    out.push((*x, dx));
                }
                if let Some(dw) = dw {
                    out.push((*w, dw));
                }
                if let Some(b) = b {
                    out.push((*b, db));
                }
            }
            Op::InstanceNorm(x, inv) => {
                out.push((*x, k::instance_norm_backward(&node.value, gout, inv)))
            }
            Op::ChannelNorm(x, inv) => {
                out.push((*x, k::channel_norm_backward(&node.value, gout, inv)))
            }
            Op::Upsample2x(x) => out.push((*x, k::upsample2x_backward(gout))),
            Op::AvgPool(x, size) => {
                out.push((*x, k::avg_pool_backward(gout, *size, val(*x).shape())))
            }
            Op::ConcatChannels(parts) => {
                let (n, c_total, h, w) = gout.dims4();
                let hw = h * w;
                let mut offset = 0;
                for &p in parts {
                    let pc = val(p).shape()[1];
                    if rg(p) {
                        let mut data = Vec::with_capacity(n * pc * hw);
                        for b in 0..n {
                            let base = (b * c_total + offset) * hw;
                            data.extend_from_slice(&gout.data()[base..base + pc * hw]);
                        }
                        out.push((p, Tensor::from_vec(&[n, pc, h, w], data).unwrap()));
                    }
                    offset += pc;
                }
            }
            Op::Warp(f, fl) => {
                let (df, dfl) = k::warp_backward(val(*f), val(*fl), gout);
                out.push((*f, df));
                out.push((*fl, dfl));
            }
            Op::SumAll(x) => {
                let g = gout.data()[0];
                out.push((*x, Tensor::full(val(*x).shape(), g)));
            }
            Op::SumSpatial(x) => {
                let (n, c, h, w) = val(*x).dims4();
                let hw = h * w;
                let mut g = Tensor::zeros(&[n, c, h, w]);
                for p in 0..n * c {
                    g.data_mut()[p * hw..(p + 1) * hw].fill(gout.data()[p]);
                }
                out.push((*x, g));
            }
            Op::SumChannels(x) => {
                let (n, c, h, w) = val(*x).dims4();
                let hw = h * w;
                let mut g = Tensor::zeros(&[n, c, h, w]);
                for b in 0..n {
                    for ch in 0..c {
                        g.data_mut()[(b * c + ch) * hw..(b * c + ch + 1) * hw]
                            .copy_from_slice(&gout.data()[b * hw..(b + 1) * hw]);
                    }
                }
                out.push((*x, g));
            }
            Op::Gram(x) => out.push((*x, k::gram_backward(val(*x), gout))),
            Op::Diff(x, axis) => out.push((*x, k::diff_backward(gout, val(*x).shape(), *axis))),
            Op::SoftmaxXent {
                logits,
                labels,
                probs,
            } => out.push((
                *logits,
                k::softmax_xent_backward(probs, labels, gout.data()[0]),
            )),
            Op::BceLogits { logits, targets } => {
                let scale = gout.data()[0] / S::from_usize(targets.numel()).unwrap();
                out.push((
                    *logits,
                    val(*logits).zip_map(targets, |z, t| (k::sigmoid(z) - t) * scale),
                ));
            }
        }
        out
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    assert_eq!(
        a.len(),
        b.len(),
        "broadcast needs equal rank: {a:?} vs {b:?}"
    );
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            assert!(
                x == y || x == 1 || y == 1,
                "cannot broadcast {a:?} with {b:?}"
            );
            x.max(y)
        })
        .collect()
}

fn strides_for(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for d in (0..shape.len()).rev() {
        strides[d] = if shape[d] == 1 && out[d] != 1 { 0 } else { acc };
        acc *= shape[d];
    }
    strides
}

/// Elementwise binary op with size-1 broadcasting between equal-rank tensors.
pub(crate) fn broadcast_binary<S: Scalar>(
    a: &Tensor<S>,
    b: &Tensor<S>,
    f: impl Fn(S, S) -> S,
) -> Tensor<S> {
    if a.shape() == b.shape() {
        return a.zip_map(b, f);
    }
    let shape = broadcast_shape(a.shape(), b.shape());
    let sa = strides_for(a.shape(), &shape);
    let sb = strides_for(b.shape(), &shape);
    let n: usize = shape.iter().product();
    let rank = shape.len();
    let mut idx = vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    let mut data = Vec::with_capacity(n);
    let (ad, bd) = (a.data(), b.data());
    for _ in 0..n {
        data.push(f(ad[ia], bd[ib]));
        for d in (0..rank).rev() {
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < shape[d] {
                break;
            }
            ia -= sa[d] * shape[d];
            ib -= sb[d] * shape[d];
            idx[d] = 0;
        }
    }
    Tensor::from_vec(&shape, data).unwrap()
}

fn expand_to<S: Scalar>(t: &Tensor<S>, shape: &[usize]) -> Tensor<S> {
    if t.shape() == shape {
        return t.clone();
    }
    broadcast_binary(t, &Tensor::zeros(shape), |x, _| x)
}

/// Sums a broadcast gradient back down to the operand's shape.
fn reduce_to_shape<S: Scalar>(g: &Tensor<S>, shape: &[usize]) -> Tensor<S> {
    if g.shape() == shape {
        return g.clone();
    }
    let out_shape = g.shape().to_vec();
    let strides = strides_for(shape, &out_shape);
    let rank = out_shape.len();
    let mut out = Tensor::zeros(shape);
    let mut idx = vec![0usize; rank];
    let mut io = 0usize;
    let od = out.data_mut();
    for &v in g.data() {
        od[io] += v;
        for d in (0..rank).rev() {
            idx[d] += 1;
            io += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            io -= strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_channel_mask() {
        let x = Tensor::<f64>::from_fn(&[1, 2, 2, 2], |i| i as f64);
        let m = Tensor::<f64>::from_vec(&[1, 1, 2, 2], vec![1.0, 0.0, 0.0, 2.0]).unwrap();
        let y = broadcast_binary(&x, &m, |a, b| a * b);
        assert_eq!(y.data(), &[0.0, 0.0, 0.0, 6.0, 4.0, 0.0, 0.0, 14.0]);
        let back = reduce_to_shape(&y, &[1, 1, 2, 2]);
        assert_eq!(back.data(), &[4.0, 0.0, 0.0, 20.0]);
    }

    #[test]
    fn backward_through_product_and_sum() {
        let mut g = Graph::<f64>::new();
        let a = g.input(Tensor::from_vec(&[1, 1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        let b = g.input(Tensor::from_vec(&[1, 1, 1, 3], vec![4.0, 5.0, 6.0]).unwrap());
        let p = g.mul(a, b);
        let s = g.sum_all(p);
        g.backward(s);
        assert_eq!(g.grad(a).unwrap().data(), &[4.0, 5.0, 6.0]);
        assert_eq!(g.grad(b).unwrap().data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::ones(&[1, 1, 1, 2]));
        let b = g.input(Tensor::ones(&[1, 1, 1, 2]));
        let p = g.mul(a, b);
        let s = g.sum_all(p);
        g.backward(s);
        assert!(g.grad(a).is_none());
        assert!(g.grad(b).is_some());
    }
}
