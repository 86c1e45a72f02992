//! Reverse-mode automatic differentiation on a flat tape.
//!
//! A [`Graph`] owns every intermediate value of one forward pass. Each
//! operation appends a node recording its inputs, so tape order is already
//! topological; [`Graph::backward`] walks the tape once in reverse,
//! accumulating vector-Jacobian products. Gradients are only computed for
//! subtrees that contain a parameter leaf.
//!
//! Elementwise binary operations broadcast NumPy-style (shapes aligned on
//! the right, size-1 axes stretched); the corresponding gradient sums over
//! the stretched axes.

use crate::tensor::kernels::{self, ConvGeom};
use crate::tensor::scalar::Scalar;
use crate::tensor::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    AddS,
    MulS(f64),
    /// Elementwise max with a constant (clamp from below).
    MaxS(f64),
    Exp,
    Ln,
    Abs,
    Tanh,
    Sigmoid,
    Softplus,
    LeakyRelu(f64),
    /// Standard normal CDF.
    NormalCdf,
    Matmul,
    Bmm,
    SoftmaxLastDim,
    LayerNorm { eps: f64 },
    Sum,
    Mean,
    Reshape,
    Permute(Vec<usize>),
    Concat { axis: usize },
    Slice { axis: usize, start: usize },
    Conv2d(ConvGeom),
    ConvT2d(ConvGeom),
}

struct Node<S> {
    value: Tensor<S>,
    op: Op,
    inputs: Vec<Var>,
    needs_grad: bool,
}

pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
}

/// Per-variable gradients produced by one backward pass.
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        assert!(da == db || da == 1 || db == 1, "broadcast mismatch {:?} vs {:?}", a, b);
        out[i] = da.max(db);
    }
    out
}

/// Strides for reading `shape` as if it had been broadcast to `target`.
fn broadcast_strides(shape: &[usize], target: &[usize]) -> Vec<usize> {
    let rank = target.len();
    let offset = rank - shape.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1usize;
    for i in (0..shape.len()).rev() {
        strides[offset + i] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

fn elementwise_broadcast<S: Scalar>(
    a: &Tensor<S>,
    b: &Tensor<S>,
    f: impl Fn(S, S) -> S,
) -> Tensor<S> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::from_vec(a.shape().to_vec(), data);
    }
    let shape = broadcast_shape(a.shape(), b.shape());
    let sa = broadcast_strides(a.shape(), &shape);
    let sb = broadcast_strides(b.shape(), &shape);
    let n: usize = shape.iter().product();
    let mut idx = vec![0usize; shape.len()];
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        let (mut ia, mut ib) = (0usize, 0usize);
        for (d, &i) in idx.iter().enumerate() {
            ia += i * sa[d];
            ib += i * sb[d];
        }
        data.push(f(a.data()[ia], b.data()[ib]));
        for d in (0..shape.len()).rev() {
            idx[d] += 1;
            if idx[d] < shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Tensor::from_vec(shape, data)
}

/// Sums `grad` over axes that were broadcast from `shape`, restoring `shape`.
fn reduce_to_shape<S: Scalar>(grad: &Tensor<S>, shape: &[usize]) -> Tensor<S> {
    if grad.shape() == shape {
        return grad.clone();
    }
    let gshape = grad.shape().to_vec();
    let strides = broadcast_strides(shape, &gshape);
    let n: usize = shape.iter().product();
    let mut out = vec![S::zero(); n];
    let mut idx = vec![0usize; gshape.len()];
    for &gv in grad.data() {
        let mut io = 0usize;
        for (d, &i) in idx.iter().enumerate() {
            io += i * strides[d];
        }
        out[io] = out[io] + gv;
        for d in (0..gshape.len()).rev() {
            idx[d] += 1;
            if idx[d] < gshape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Tensor::from_vec(shape.to_vec(), out)
}

fn stable_sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

fn stable_softplus<S: Scalar>(x: S) -> S {
    if x > S::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor<S>, op: Op, inputs: Vec<Var>) -> Var {
        debug_assert!(value.all_finite(), "non-finite output of {:?}", op);
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, inputs, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Constant leaf: participates in forward only.
    pub fn input(&mut self, value: Tensor<S>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, inputs: vec![], needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf: gradient is collected for it.
    pub fn param(&mut self, value: Tensor<S>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, inputs: vec![], needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let t = elementwise_broadcast(self.value(a), self.value(b), |x, y| x + y);
        self.push(t, Op::Add, vec![a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let t = elementwise_broadcast(self.value(a), self.value(b), |x, y| x - y);
        self.push(t, Op::Sub, vec![a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let t = elementwise_broadcast(self.value(a), self.value(b), |x, y| x * y);
        self.push(t, Op::Mul, vec![a, b])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let t = elementwise_broadcast(self.value(a), self.value(b), |x, y| x / y);
        self.push(t, Op::Div, vec![a, b])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let cs = S::from_f64(c);
        let t = self.value(a).map(|x| x + cs);
        self.push(t, Op::AddS, vec![a])
    }

    pub fn mul_scalar(&mut self, a: Var, c: f64) -> Var {
        let cs = S::from_f64(c);
        let t = self.value(a).map(|x| x * cs);
        self.push(t, Op::MulS(c), vec![a])
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.mul_scalar(a, -1.0)
    }

    /// Elementwise max(x, c): clamps from below at a constant.
    pub fn max_scalar(&mut self, a: Var, c: f64) -> Var {
        let cs = S::from_f64(c);
        let t = self.value(a).map(|x| x.max(cs));
        self.push(t, Op::MaxS(c), vec![a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x.exp());
        self.push(t, Op::Exp, vec![a])
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x.ln());
        self.push(t, Op::Ln, vec![a])
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x.abs());
        self.push(t, Op::Abs, vec![a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x.tanh());
        self.push(t, Op::Tanh, vec![a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a).map(stable_sigmoid);
        self.push(t, Op::Sigmoid, vec![a])
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let t = self.value(a).map(stable_softplus);
        self.push(t, Op::Softplus, vec![a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let s = S::from_f64(slope);
        let t = self.value(a).map(|x| if x >= S::zero() { x } else { s * x });
        self.push(t, Op::LeakyRelu(slope), vec![a])
    }

    /// Standard normal CDF, computed through erfc for tail accuracy.
    pub fn normal_cdf(&mut self, a: Var) -> Var {
        let half = S::from_f64(0.5);
        let inv_sqrt2 = S::from_f64(std::f64::consts::FRAC_1_SQRT_2);
        let t = self.value(a).map(|x| half * (-x * inv_sqrt2).erfc());
        self.push(t, Op::NormalCdf, vec![a])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        assert_eq!(sa.len(), 2, "matmul lhs must be rank 2");
        assert_eq!(sb.len(), 2, "matmul rhs must be rank 2");
        assert_eq!(sa[1], sb[0], "matmul inner dims {:?} {:?}", sa, sb);
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), sa[0], sa[1], sb[1]);
        let t = Tensor::from_vec(vec![sa[0], sb[1]], data);
        self.push(t, Op::Matmul, vec![a, b])
    }

    /// Batched matmul on rank-3 tensors: (B,M,K) x (B,K,N) -> (B,M,N).
    pub fn bmm(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        assert_eq!(sa.len(), 3, "bmm lhs must be rank 3");
        assert_eq!(sb.len(), 3, "bmm rhs must be rank 3");
        assert_eq!(sa[0], sb[0], "bmm batch dims {:?} {:?}", sa, sb);
        assert_eq!(sa[2], sb[1], "bmm inner dims {:?} {:?}", sa, sb);
        let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut data = Vec::with_capacity(bs * m * n);
        for i in 0..bs {
            let block = kernels::matmul(
                &self.value(a).data()[i * m * k..(i + 1) * m * k],
                &self.value(b).data()[i * k * n..(i + 1) * k * n],
                m,
                k,
                n,
            );
            data.extend_from_slice(&block);
        }
        let t = Tensor::from_vec(vec![bs, m, n], data);
        self.push(t, Op::Bmm, vec![a, b])
    }

    /// Numerically stable softmax over the last axis.
    pub fn softmax_lastdim(&mut self, a: Var) -> Var {
        let shape = self.shape(a).to_vec();
        let d = *shape.last().expect("softmax needs rank >= 1");
        let mut data = Vec::with_capacity(self.value(a).len());
        for row in self.value(a).data().chunks(d) {
            let m = row.iter().cloned().fold(S::neg_infinity(), S::max);
            let exps: Vec<S> = row.iter().map(|&v| (v - m).exp()).collect();
            let sum = exps.iter().fold(S::zero(), |acc, &v| acc + v);
            data.extend(exps.into_iter().map(|v| v / sum));
        }
        let t = Tensor::from_vec(shape, data);
        self.push(t, Op::SoftmaxLastDim, vec![a])
    }

    /// Layer normalization over the last axis with affine parameters.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().expect("layer_norm needs rank >= 1");
        assert_eq!(self.shape(gamma), &[d], "layer_norm gamma shape");
        assert_eq!(self.shape(beta), &[d], "layer_norm beta shape");
        let epss = S::from_f64(eps);
        let dn = S::from_f64(d as f64);
        let (gd, bd) = (self.value(gamma).data().to_vec(), self.value(beta).data().to_vec());
        let mut data = Vec::with_capacity(self.value(x).len());
        for row in self.value(x).data().chunks(d) {
            let mean = row.iter().fold(S::zero(), |a, &v| a + v) / dn;
            let var = row.iter().fold(S::zero(), |a, &v| a + (v - mean) * (v - mean)) / dn;
            let inv = S::one() / (var + epss).sqrt();
            for (i, &v) in row.iter().enumerate() {
                data.push(gd[i] * ((v - mean) * inv) + bd[i]);
            }
        }
        let t = Tensor::from_vec(shape, data);
        self.push(t, Op::LayerNorm { eps }, vec![x, gamma, beta])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().fold(S::zero(), |acc, &v| acc + v);
        self.push(Tensor::scalar(s), Op::Sum, vec![a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let s = self.value(a).data().iter().fold(S::zero(), |acc, &v| acc + v);
        let t = Tensor::scalar(s / S::from_f64(n as f64));
        self.push(t, Op::Mean, vec![a])
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Var {
        let t = self.value(a).clone().reshaped(shape);
        self.push(t, Op::Reshape, vec![a])
    }

    /// Axis permutation; `perm[i]` names the source axis for output axis `i`.
    pub fn permute(&mut self, a: Var, perm: Vec<usize>) -> Var {
        let src = self.value(a);
        let sshape = src.shape().to_vec();
        assert_eq!(perm.len(), sshape.len(), "permute rank mismatch");
        let oshape: Vec<usize> = perm.iter().map(|&p| sshape[p]).collect();
        let t = permute_data(src, &perm, &oshape);
        self.push(t, Op::Permute(perm), vec![a])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let base = self.shape(parts[0]).to_vec();
        let mut total = 0usize;
        for &p in parts {
            let s = self.shape(p);
            assert_eq!(s.len(), base.len(), "concat rank mismatch");
            for (d, (&sd, &bd)) in s.iter().zip(&base).enumerate() {
                assert!(d == axis || sd == bd, "concat off-axis dims must match");
            }
            total += s[axis];
        }
        let mut oshape = base.clone();
        oshape[axis] = total;
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = vec![S::zero(); oshape.iter().product()];
        let mut written = 0usize;
        for &p in parts {
            let pshape = self.shape(p).to_vec();
            let pa = pshape[axis];
            let src = self.value(p).data();
            for o in 0..outer {
                let dst_base = (o * total + written) * inner;
                let src_base = o * pa * inner;
                data[dst_base..dst_base + pa * inner]
                    .copy_from_slice(&src[src_base..src_base + pa * inner]);
            }
            written += pa;
        }
        let t = Tensor::from_vec(oshape, data);
        self.push(t, Op::Concat { axis }, parts.to_vec())
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Var {
        let sshape = self.shape(a).to_vec();
        assert!(start + len <= sshape[axis], "slice out of range");
        let outer: usize = sshape[..axis].iter().product();
        let inner: usize = sshape[axis + 1..].iter().product();
        let mut oshape = sshape.clone();
        oshape[axis] = len;
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * sshape[axis] + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let t = Tensor::from_vec(oshape, data);
        self.push(t, Op::Slice { axis, start }, vec![a])
    }

    /// 2-D convolution; x (Ci,H,W), w (Co,Ci,K,K), b (Co).
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        assert_eq!(xs.len(), 3, "conv2d input must be (C,H,W)");
        assert_eq!(ws.len(), 4, "conv2d weight must be (Co,Ci,K,K)");
        assert_eq!(ws[1], xs[0], "conv2d channel mismatch");
        assert_eq!(ws[2], ws[3], "conv2d kernel must be square");
        let geom = ConvGeom {
            in_c: xs[0],
            in_h: xs[1],
            in_w: xs[2],
            out_c: ws[0],
            k: ws[2],
            stride,
            pad,
            out_pad: 0,
        };
        let (oh, ow) = geom.conv_out_hw();
        let data =
            kernels::conv2d(self.value(x).data(), self.value(w).data(), self.value(b).data(), &geom);
        let t = Tensor::from_vec(vec![geom.out_c, oh, ow], data);
        self.push(t, Op::Conv2d(geom), vec![x, w, b])
    }

    /// Transposed 2-D convolution; x (Ci,H,W), w (Ci,Co,K,K), b (Co).
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
        out_pad: usize,
    ) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        assert_eq!(xs.len(), 3, "conv_transpose2d input must be (C,H,W)");
        assert_eq!(ws.len(), 4, "conv_transpose2d weight must be (Ci,Co,K,K)");
        assert_eq!(ws[0], xs[0], "conv_transpose2d channel mismatch");
        let geom = ConvGeom {
            in_c: xs[0],
            in_h: xs[1],
            in_w: xs[2],
            out_c: ws[1],
            k: ws[2],
            stride,
            pad,
            out_pad,
        };
        let (oh, ow) = geom.conv_t_out_hw();
        let data = kernels::conv_transpose2d(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            &geom,
        );
        let t = Tensor::from_vec(vec![geom.out_c, oh, ow], data);
        self.push(t, Op::ConvT2d(geom), vec![x, w, b])
    }

    /// Reverse pass from a scalar root; returns per-variable gradients.
    pub fn backward(&self, root: Var) -> Gradients<S> {
        assert_eq!(self.value(root).len(), 1, "backward root must be scalar");
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(S::one()));
        for id in (0..=root.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue; // leaf gradients stay stored for the caller
            }
            let Some(gout) = grads[id].take() else { continue };
            let contribs = self.vjp(node, &gout);
            for (input, delta) in node.inputs.iter().zip(contribs) {
                if !self.nodes[input.0].needs_grad {
                    continue;
                }
                let Some(delta) = delta else { continue };
                match &mut grads[input.0] {
                    Some(acc) => {
                        for (a, d) in acc.data_mut().iter_mut().zip(delta.data()) {
                            *a = *a + *d;
                        }
                    }
                    slot => *slot = Some(delta),
                }
            }
        }
        Gradients { grads }
    }

    /// Vector-Jacobian product of one node; one optional tensor per input.
    fn vjp(&self, node: &Node<S>, gout: &Tensor<S>) -> Vec<Option<Tensor<S>>> {
        let val = |v: &Var| &self.nodes[v.0].value;
        let needs = |v: &Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf => vec![],
            Op::Add => {
                let mk = |v: &Var| Some(reduce_to_shape(gout, val(v).shape()));
                vec![mk(&node.inputs[0]), mk(&node.inputs[1])]
            }
            Op::Sub => {
                let a = Some(reduce_to_shape(gout, val(&node.inputs[0]).shape()));
                let gneg = gout.map(|v| -v);
                let b = Some(reduce_to_shape(&gneg, val(&node.inputs[1]).shape()));
                vec![a, b]
            }
            Op::Mul => {
                let (a, b) = (&node.inputs[0], &node.inputs[1]);
                let da = if needs(a) {
                    let g = elementwise_broadcast(gout, val(b), |g, y| g * y);
                    Some(reduce_to_shape(&g, val(a).shape()))
                } else {
                    None
                };
                let db = if needs(b) {
                    let g = elementwise_broadcast(gout, val(a), |g, x| g * x);
                    Some(reduce_to_shape(&g, val(b).shape()))
                } else {
                    None
                };
                vec![da, db]
            }
            Op::Div => {
                let (a, b) = (&node.inputs[0], &node.inputs[1]);
                let da = if needs(a) {
                    let g = elementwise_broadcast(gout, val(b), |g, y| g / y);
                    Some(reduce_to_shape(&g, val(a).shape()))
                } else {
                    None
                };
                let db = if needs(b) {
                    // d/db (a/b) = -a / b^2
                    let quotient = elementwise_broadcast(val(a), val(b), |x, y| -x / (y * y));
                    let g = elementwise_broadcast(gout, &quotient, |g, q| g * q);
                    Some(reduce_to_shape(&g, val(b).shape()))
                } else {
                    None
                };
                vec![da, db]
            }
            Op::AddS => vec![Some(gout.clone())],
            Op::MulS(c) => {
                let cs = S::from_f64(*c);
                vec![Some(gout.map(|g| g * cs))]
            }
            Op::MaxS(c) => {
                let cs = S::from_f64(*c);
                let x = val(&node.inputs[0]);
                let data = x
                    .data()
                    .iter()
                    .zip(gout.data())
                    .map(|(&xv, &g)| if xv >= cs { g } else { S::zero() })
                    .collect();
                vec![Some(Tensor::from_vec(x.shape().to_vec(), data))]
            }
            Op::Exp => {
                let y = &node.value;
                let data = y.data().iter().zip(gout.data()).map(|(&yv, &g)| g * yv).collect();
                vec![Some(Tensor::from_vec(y.shape().to_vec(), data))]
            }
            Op::Ln => {
                let x = val(&node.inputs[0]);
                let data = x.data().iter().zip(gout.data()).map(|(&xv, &g)| g / xv).collect();
                vec![Some(Tensor::from_vec(x.shape().to_vec(), data))]
            }
            Op::Abs => {
                let x = val(&node.inputs[0]);
                let data = x
                    .data()
                    .iter()
                    .zip(gout.data())
                    .map(|(&xv, &g)| {
                        if xv > S::zero() {
                            g
                        } else if xv < S::zero() {
                            -g
                        } else {
                            S::zero()
                        }
                    })
                    .collect();
                vec![Some(Tensor::from_vec(x.shape().to_vec(), data))]
            }
            Op::Tanh => {
                let y = &node.value;
                let data = y
                    .data()
                    .iter()
                    .zip(gout.data())
                    .map(|(&yv, &g)| g * (S::one() - yv * yv))
                    .collect();
                vec![Some(Tensor::from_vec(y.shape().to_vec(), data))]
            }
            Op::Sigmoid => {
                let y = &node.value;
                let data = y
                    .data()
                    .iter()
                    .zip(gout.data())
                    .map(|(&yv, &g)| g * yv * (S::one() - yv))
                    .collect();
                vec![Some(Tensor::from_vec(y.shape().to_vec(), data))]
            }
            Op::Softplus => {
                let x = val(&node.inputs[0]);
                let data = x
                    .data()
                    .iter()
                    .zip(gout.data())
                    .map(|(&xv, &g)| g * stable_sigmoid(xv))
                    .collect();
                vec![Some(Tensor::from_vec(x.shape().to_vec(), data))]
            }
            Op::LeakyRelu(slope) => {
                let s = S::from_f64(*slope);
                let x = val(&node.inputs[0]);
                let data = x
                    .data()
                    .iter()
                    .zip(gout.data())
                    .map(|(&xv, &g)| if xv >= S::zero() { g } else { g * s })
                    .collect();
                vec![Some(Tensor::from_vec(x.shape().to_vec(), data))]
            }
            Op::NormalCdf => {
                let x = val(&node.inputs[0]);
                let norm = S::from_f64(1.0 / (2.0 * std::f64::consts::PI).sqrt());
                let half = S::from_f64(0.5);
                let data = x
                    .data()
                    .iter()
                    .zip(gout.data())
                    .map(|(&xv, &g)| g * norm * (-half * xv * xv).exp())
                    .collect();
                vec![Some(Tensor::from_vec(x.shape().to_vec(), data))]
            }
            Op::Matmul => {
                let (a, b) = (&node.inputs[0], &node.inputs[1]);
                let (m, k) = (val(a).shape()[0], val(a).shape()[1]);
                let n = val(b).shape()[1];
                let da = if needs(a) {
                    let bt = kernels::transpose(val(b).data(), k, n);
                    Some(Tensor::from_vec(
                        vec![m, k],
                        kernels::matmul(gout.data(), &bt, m, n, k),
                    ))
                } else {
                    None
                };
                let db = if needs(b) {
                    let at = kernels::transpose(val(a).data(), m, k);
                    Some(Tensor::from_vec(
                        vec![k, n],
                        kernels::matmul(&at, gout.data(), k, m, n),
                    ))
                } else {
                    None
                };
                vec![da, db]
            }
            Op::Bmm => {
                let (a, b) = (&node.inputs[0], &node.inputs[1]);
                let (bs, m, k) = (val(a).shape()[0], val(a).shape()[1], val(a).shape()[2]);
                let n = val(b).shape()[2];
                let da = if needs(a) {
                    let mut data = Vec::with_capacity(bs * m * k);
                    for i in 0..bs {
                        let bt =
                            kernels::transpose(&val(b).data()[i * k * n..(i + 1) * k * n], k, n);
                        data.extend(kernels::matmul(
                            &gout.data()[i * m * n..(i + 1) * m * n],
                            &bt,
                            m,
                            n,
                            k,
                        ));
                    }
                    Some(Tensor::from_vec(vec![bs, m, k], data))
                } else {
                    None
                };
                let db = if needs(b) {
                    let mut data = Vec::with_capacity(bs * k * n);
                    for i in 0..bs {
                        let at =
                            kernels::transpose(&val(a).data()[i * m * k..(i + 1) * m * k], m, k);
                        data.extend(kernels::matmul(
                            &at,
                            &gout.data()[i * m * n..(i + 1) * m * n],
                            k,
                            m,
                            n,
                        ));
                    }
                    Some(Tensor::from_vec(vec![bs, k, n], data))
                } else {
                    None
                };
                vec![da, db]
            }
            Op::SoftmaxLastDim => {
                let y = &node.value;
                let d = *y.shape().last().unwrap();
                let mut data = Vec::with_capacity(y.len());
                for (yrow, grow) in y.data().chunks(d).zip(gout.data().chunks(d)) {
                    let dot = yrow
                        .iter()
                        .zip(grow)
                        .fold(S::zero(), |acc, (&yv, &gv)| acc + yv * gv);
                    data.extend(yrow.iter().zip(grow).map(|(&yv, &gv)| yv * (gv - dot)));
                }
                vec![Some(Tensor::from_vec(y.shape().to_vec(), data))]
            }
            Op::LayerNorm { eps } => {
                let x = val(&node.inputs[0]);
                let gamma = val(&node.inputs[1]);
                let d = *x.shape().last().unwrap();
                let dn = S::from_f64(d as f64);
                let epss = S::from_f64(*eps);
                let rows = x.len() / d;
                let mut dx = vec![S::zero(); x.len()];
                let mut dgamma = vec![S::zero(); d];
                let mut dbeta = vec![S::zero(); d];
                for r in 0..rows {
                    let xrow = &x.data()[r * d..(r + 1) * d];
                    let grow = &gout.data()[r * d..(r + 1) * d];
                    let mean = xrow.iter().fold(S::zero(), |a, &v| a + v) / dn;
                    let var =
                        xrow.iter().fold(S::zero(), |a, &v| a + (v - mean) * (v - mean)) / dn;
                    let inv = S::one() / (var + epss).sqrt();
                    // dxhat, and the two row sums the closed form needs
                    let mut sum_dxhat = S::zero();
                    let mut sum_dxhat_xhat = S::zero();
                    let xhat: Vec<S> = xrow.iter().map(|&v| (v - mean) * inv).collect();
                    let dxhat: Vec<S> =
                        grow.iter().zip(gamma.data()).map(|(&g, &gm)| g * gm).collect();
                    for i in 0..d {
                        sum_dxhat = sum_dxhat + dxhat[i];
                        sum_dxhat_xhat = sum_dxhat_xhat + dxhat[i] * xhat[i];
                        dgamma[i] = dgamma[i] + grow[i] * xhat[i];
                        dbeta[i] = dbeta[i] + grow[i];
                    }
                    for i in 0..d {
                        dx[r * d + i] = inv / dn
                            * (dn * dxhat[i] - sum_dxhat - xhat[i] * sum_dxhat_xhat);
                    }
                }
                vec![
                    Some(Tensor::from_vec(x.shape().to_vec(), dx)),
                    Some(Tensor::from_vec(vec![d], dgamma)),
                    Some(Tensor::from_vec(vec![d], dbeta)),
                ]
            }
            Op::Sum => {
                let x = val(&node.inputs[0]);
                let g = gout.item();
                vec![Some(Tensor::full(x.shape().to_vec(), g))]
            }
            Op::Mean => {
                let x = val(&node.inputs[0]);
                let g = gout.item() / S::from_f64(x.len() as f64);
                vec![Some(Tensor::full(x.shape().to_vec(), g))]
            }
            Op::Reshape => {
                let x = val(&node.inputs[0]);
                vec![Some(gout.clone().reshaped(x.shape().to_vec()))]
            }
            Op::Permute(perm) => {
                // Inverse permutation routes the gradient back.
                let mut inv = vec![0usize; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                let x = val(&node.inputs[0]);
                let t = permute_data(gout, &inv, x.shape());
                vec![Some(t)]
            }
            Op::Concat { axis } => {
                let total = node.value.shape()[*axis];
                let outer: usize = node.value.shape()[..*axis].iter().product();
                let inner: usize = node.value.shape()[*axis + 1..].iter().product();
                let mut outs = Vec::with_capacity(node.inputs.len());
                let mut offset = 0usize;
                for input in &node.inputs {
                    let pshape = val(input).shape().to_vec();
                    let pa = pshape[*axis];
                    let mut data = Vec::with_capacity(val(input).len());
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        data.extend_from_slice(&gout.data()[base..base + pa * inner]);
                    }
                    offset += pa;
                    outs.push(Some(Tensor::from_vec(pshape, data)));
                }
                outs
            }
            Op::Slice { axis, start } => {
                let x = val(&node.inputs[0]);
                let sshape = x.shape().to_vec();
                let len = node.value.shape()[*axis];
                let outer: usize = sshape[..*axis].iter().product();
                let inner: usize = sshape[*axis + 1..].iter().product();
                let mut dx = vec![S::zero(); x.len()];
                for o in 0..outer {
                    let dst = (o * sshape[*axis] + start) * inner;
                    let src = o * len * inner;
                    dx[dst..dst + len * inner]
                        .copy_from_slice(&gout.data()[src..src + len * inner]);
                }
                vec![Some(Tensor::from_vec(sshape, dx))]
            }
            Op::Conv2d(geom) => {
                let (x, w, _b) = (&node.inputs[0], &node.inputs[1], &node.inputs[2]);
                let dx = if needs(x) {
                    Some(Tensor::from_vec(
                        val(x).shape().to_vec(),
                        kernels::conv2d_grad_x(gout.data(), val(w).data(), geom),
                    ))
                } else {
                    None
                };
                let dw = if needs(w) {
                    Some(Tensor::from_vec(
                        val(w).shape().to_vec(),
                        kernels::conv2d_grad_w(val(x).data(), gout.data(), geom),
                    ))
                } else {
                    None
                };
                let db = Some(Tensor::from_vec(
                    vec![geom.out_c],
                    kernels::grad_bias(gout.data(), geom.out_c),
                ));
                vec![dx, dw, db]
            }
            Op::ConvT2d(geom) => {
                let (x, w, _b) = (&node.inputs[0], &node.inputs[1], &node.inputs[2]);
                let dx = if needs(x) {
                    Some(Tensor::from_vec(
                        val(x).shape().to_vec(),
                        kernels::conv_transpose2d_grad_x(gout.data(), val(w).data(), geom),
                    ))
                } else {
                    None
                };
                let dw = if needs(w) {
                    Some(Tensor::from_vec(
                        val(w).shape().to_vec(),
                        kernels::conv_transpose2d_grad_w(val(x).data(), gout.data(), geom),
                    ))
                } else {
                    None
                };
                let db = Some(Tensor::from_vec(
                    vec![geom.out_c],
                    kernels::grad_bias(gout.data(), geom.out_c),
                ));
                vec![dx, dw, db]
            }
        }
    }
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

fn permute_data<S: Scalar>(src: &Tensor<S>, perm: &[usize], oshape: &[usize]) -> Tensor<S> {
    let sshape = src.shape();
    let rank = sshape.len();
    let mut sstrides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        sstrides[i] = sstrides[i + 1] * sshape[i + 1];
    }
    let n = src.len();
    let mut data = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    for _ in 0..n {
        let mut si = 0usize;
        for (d, &i) in idx.iter().enumerate() {
            si += i * sstrides[perm[d]];
        }
        data.push(src.data()[si]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < oshape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Tensor::from_vec(oshape.to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaky_relu_matches_definition() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::from_vec(vec![2], vec![-1.0, 2.0]));
        let y = g.leaky_relu(x, 0.01);
        assert_eq!(g.value(y).data(), &[-0.01, 2.0]);
    }

    #[test]
    fn softmax_of_constant_row_is_uniform() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::from_vec(vec![4], vec![0.0; 4]));
        let y = g.softmax_lastdim(x);
        for &v in g.value(y).data() {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn layer_norm_of_constant_vector_is_beta() {
        // Normalized constant row is zero, so the affine output equals beta.
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::from_vec(vec![1, 4], vec![3.0; 4]));
        let gamma = g.input(Tensor::from_vec(vec![4], vec![2.0; 4]));
        let beta = g.input(Tensor::from_vec(vec![4], vec![0.5; 4]));
        let y = g.layer_norm(x, gamma, beta, 1e-5);
        for &v in g.value(y).data() {
            assert!((v - 0.5).abs() < 1e-12, "got {v}");
        }
    }

    #[test]
    fn normal_cdf_at_half_matches_reference() {
        // Phi(0.5) = 0.6914624612740131 (standard normal table).
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::scalar(0.5));
        let y = g.normal_cdf(x);
        assert!((g.value(y).item() - 0.691_462_461_274_013_1).abs() < 1e-12);
    }

    #[test]
    fn broadcast_add_and_gradient_reduce() {
        let mut g = Graph::<f64>::new();
        let a = g.param(Tensor::from_vec(vec![2, 3], vec![1.0; 6]));
        let b = g.param(Tensor::from_vec(vec![1, 3], vec![10.0, 20.0, 30.0]));
        let c = g.add(a, b);
        assert_eq!(g.value(c).data(), &[11.0, 21.0, 31.0, 11.0, 21.0, 31.0]);
        let s = g.sum(c);
        let grads = g.backward(s);
        // b was broadcast over 2 rows, so its gradient sums to 2 per column.
        assert_eq!(grads.get(b).unwrap().data(), &[2.0, 2.0, 2.0]);
        assert_eq!(grads.get(a).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn matmul_gradients_accumulate_through_shared_input() {
        let mut g = Graph::<f64>::new();
        let a = g.param(Tensor::from_vec(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let y = g.matmul(a, a);
        let s = g.sum(y);
        let grads = g.backward(s);
        // d/dA sum(A A) = (1 A^T) accumulation; finite-difference spot check.
        let fd = {
            let f = |m: &[f64]| -> f64 {
                let y = kernels::matmul(m, m, 2, 2, 2);
                y.iter().sum()
            };
            let base: Vec<f64> = vec![1.0, 2.0, 3.0, 4.0];
            let mut out = vec![0.0; 4];
            let eps = 1e-6;
            for i in 0..4 {
                let mut hi = base.clone();
                let mut lo = base.clone();
                hi[i] += eps;
                lo[i] -= eps;
                out[i] = (f(&hi) - f(&lo)) / (2.0 * eps);
            }
            out
        };
        for (a, n) in grads.get(a).unwrap().data().iter().zip(&fd) {
            assert!((a - n).abs() < 1e-6, "analytic {a} vs fd {n}");
        }
    }

    #[test]
    fn slice_and_concat_round_trip_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::from_vec(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let top = g.slice(x, 0, 0, 1);
        let rest = g.slice(x, 0, 1, 2);
        let back = g.concat(&[top, rest], 0);
        let s = g.sum(back);
        let grads = g.backward(s);
        assert_eq!(grads.get(x).unwrap().data(), &[1.0; 6]);
    }
}
