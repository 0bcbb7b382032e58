//! Reverse-mode differentiation by operation recording.
//!
//! Every forward primitive appends a node to the [`Tape`]; node ids are
//! therefore a topological order and the backward pass is a single reverse
//! sweep. A tape runs backward at most once.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::broadcast::{checked_broadcast, expand, reduce_to, zip_map};
use super::kernels::{
    conv2d_depthwise, conv2d_depthwise_backward, grid_sample, grid_sample_backward,
    logsumexp_rows, softmax_rows,
};
use super::{numel_of, Tensor};

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, T),
    Shift(usize),
    Exp(usize),
    Log(usize),
    Tanh(usize),
    Sigmoid(usize),
    Softplus(usize),
    Relu(usize),
    Sin(usize),
    Cos(usize),
    Square(usize),
    Clamp(usize, T, T),
    MatMul(usize, usize),
    Reshape(usize),
    Concat { parts: Vec<usize>, axis: usize },
    Slice { src: usize, axis: usize, start: usize },
    SumAll(usize),
    SumAxis { src: usize, axis: usize },
    Softmax(usize),
    LogSoftmax(usize),
    LogSumExp(usize),
    GridSample { image: usize, theta: usize },
    DwConv { input: usize, kernels: usize },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

struct Inner<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

/// Records forward operations for one backward pass. Confined to one thread.
pub struct Tape<T: Scalar> {
    inner: RefCell<Inner<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.inner.borrow();
        f.debug_struct("Tape")
            .field("nodes", &inner.nodes.len())
            .field("consumed", &inner.consumed)
            .finish()
    }
}

/// Handle to a value recorded on a tape.
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Scalar> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T: Scalar> Copy for Var<'_, T> {}

impl<T: Scalar> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            inner: RefCell::new(Inner {
                nodes: Vec::new(),
                consumed: false,
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var<'_, T> {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var { tape: self, id }
    }

    /// Records a leaf; it receives a gradient iff `tensor.requires_grad()`.
    pub fn leaf(&self, tensor: Tensor<T>) -> Var<'_, T> {
        let rg = tensor.requires_grad();
        self.push(tensor, Op::Leaf, rg)
    }

    /// Records a trainable leaf.
    pub fn param(&self, tensor: Tensor<T>) -> Var<'_, T> {
        self.leaf(tensor.with_requires_grad(true))
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&self, tensor: Tensor<T>) -> Var<'_, T> {
        self.leaf(tensor.with_requires_grad(false))
    }

    fn value(&self, id: usize) -> Tensor<T> {
        self.inner.borrow().nodes[id].value.clone()
    }

    fn needs(&self, id: usize) -> bool {
        self.inner.borrow().nodes[id].needs_grad
    }

    fn own<'t>(&'t self, v: Var<'_, T>) -> Result<usize> {
        if std::ptr::eq(self, v.tape) {
            Ok(v.id)
        } else {
            Err(Error::ForeignVar(v.id))
        }
    }

    /// Concatenates along `axis`; all other axes must agree.
    pub fn concat<'t>(&'t self, parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        if parts.is_empty() {
            return Err(Error::invalid("concat of zero tensors"));
        }
        let ids = parts
            .iter()
            .map(|p| self.own(*p))
            .collect::<Result<Vec<_>>>()?;
        let values: Vec<Tensor<T>> = ids.iter().map(|&i| self.value(i)).collect();
        let base = values[0].shape().to_vec();
        if axis >= base.len() {
            return Err(Error::invalid(format!(
                "concat axis {axis} out of range for rank {}",
                base.len()
            )));
        }
        let mut total = 0;
        for v in &values {
            let s = v.shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(ax, (a, b))| ax == axis || a == b);
            if !compatible {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in &values {
                let block = v.shape()[axis] * inner;
                out.extend_from_slice(&v.data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let needs = ids.iter().any(|&i| self.needs(i));
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Concat { parts: ids, axis },
            needs,
        ))
    }

    /// Runs the reverse sweep from a one-element `loss`.
    ///
    /// Every leaf recorded with `requires_grad` gets an entry, zero-filled
    /// when the loss does not depend on it.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let loss_id = self.own(loss)?;
        let mut inner = self.inner.borrow_mut();
        if inner.consumed {
            return Err(Error::TapeConsumed);
        }
        let loss_shape = inner.nodes[loss_id].value.shape().to_vec();
        if inner.nodes[loss_id].value.numel() != 1 {
            return Err(Error::NonScalarLoss(loss_shape));
        }
        inner.consumed = true;
        let nodes = &inner.nodes;

        let mut grads: Vec<Option<Vec<T>>> = vec![None; nodes.len()];
        grads[loss_id] = Some(vec![T::one()]);
        for id in (0..=loss_id).rev() {
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            propagate(nodes, id, &g, &mut grads);
        }

        let mut map = HashMap::new();
        for (id, node) in nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.needs_grad {
                let shape = node.value.shape().to_vec();
                let data = grads[id]
                    .take()
                    .unwrap_or_else(|| vec![T::zero(); node.value.numel()]);
                map.insert(id, Tensor::from_parts(shape, data));
            }
        }
        Ok(Gradients { map })
    }
}

/// Gradients of a loss with respect to the tape's trainable leaves.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    map: HashMap<usize, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.map.get(&var.id)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], id: usize, contrib: Vec<T>) {
    match &mut grads[id] {
        Some(buf) => {
            for (b, c) in buf.iter_mut().zip(contrib) {
                *b += c;
            }
        }
        slot @ None => *slot = Some(contrib),
    }
}

fn buffer<'g, T: Scalar>(grads: &'g mut [Option<Vec<T>>], id: usize, len: usize) -> &'g mut Vec<T> {
    grads[id].get_or_insert_with(|| vec![T::zero(); len])
}

fn unary_grad<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    src: usize,
    out: &Tensor<T>,
    g: &[T],
    f: impl Fn(T, T) -> T,
) {
    if !nodes[src].needs_grad {
        return;
    }
    let x = nodes[src].value.data();
    let y = out.data();
    let contrib: Vec<T> = g
        .iter()
        .zip(x.iter().zip(y))
        .map(|(&gi, (&xi, &yi))| gi * f(xi, yi))
        .collect();
    accumulate(grads, src, contrib);
}

fn propagate<T: Scalar>(nodes: &[Node<T>], id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
    let out = &nodes[id].value;
    let out_shape = out.shape();
    let needs = |i: usize| nodes[i].needs_grad;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            for &p in [a, b] {
                if needs(p) {
                    accumulate(grads, p, reduce_to(g, out_shape, nodes[p].value.shape()));
                }
            }
        }
        Op::Sub(a, b) => {
            if needs(*a) {
                accumulate(grads, *a, reduce_to(g, out_shape, nodes[*a].value.shape()));
            }
            if needs(*b) {
                let neg: Vec<T> = g.iter().map(|&v| -v).collect();
                accumulate(grads, *b, reduce_to(&neg, out_shape, nodes[*b].value.shape()));
            }
        }
        Op::Mul(a, b) => {
            let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
            if needs(*a) {
                let eb = expand(vb.data(), vb.shape(), out_shape);
                let prod: Vec<T> = g.iter().zip(&eb).map(|(&x, &y)| x * y).collect();
                accumulate(grads, *a, reduce_to(&prod, out_shape, va.shape()));
            }
            if needs(*b) {
                let ea = expand(va.data(), va.shape(), out_shape);
                let prod: Vec<T> = g.iter().zip(&ea).map(|(&x, &y)| x * y).collect();
                accumulate(grads, *b, reduce_to(&prod, out_shape, vb.shape()));
            }
        }
        Op::Div(a, b) => {
            let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
            let eb = expand(vb.data(), vb.shape(), out_shape);
            if needs(*a) {
                let q: Vec<T> = g.iter().zip(&eb).map(|(&x, &y)| x / y).collect();
                accumulate(grads, *a, reduce_to(&q, out_shape, va.shape()));
            }
            if needs(*b) {
                // d(a/b)/db = -(a/b)/b = -out/b
                let q: Vec<T> = g
                    .iter()
                    .zip(out.data().iter().zip(&eb))
                    .map(|(&gi, (&yi, &bi))| -gi * yi / bi)
                    .collect();
                accumulate(grads, *b, reduce_to(&q, out_shape, vb.shape()));
            }
        }
        Op::Neg(a) => unary_grad(nodes, grads, *a, out, g, |_, _| -T::one()),
        Op::Scale(a, c) => {
            let c = *c;
            unary_grad(nodes, grads, *a, out, g, move |_, _| c)
        }
        Op::Shift(a) => unary_grad(nodes, grads, *a, out, g, |_, _| T::one()),
        Op::Exp(a) => unary_grad(nodes, grads, *a, out, g, |_, y| y),
        Op::Log(a) => unary_grad(nodes, grads, *a, out, g, |x, _| T::one() / x),
        Op::Tanh(a) => unary_grad(nodes, grads, *a, out, g, |_, y| T::one() - y * y),
        Op::Sigmoid(a) => unary_grad(nodes, grads, *a, out, g, |_, y| y * (T::one() - y)),
        Op::Softplus(a) => unary_grad(nodes, grads, *a, out, g, |x, _| sigmoid(x)),
        Op::Relu(a) => unary_grad(nodes, grads, *a, out, g, |x, _| {
            if x > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        }),
        Op::Sin(a) => unary_grad(nodes, grads, *a, out, g, |x, _| x.cos()),
        Op::Cos(a) => unary_grad(nodes, grads, *a, out, g, |x, _| -x.sin()),
        Op::Square(a) => unary_grad(nodes, grads, *a, out, g, |x, _| x + x),
        Op::Clamp(a, lo, hi) => {
            let (lo, hi) = (*lo, *hi);
            unary_grad(nodes, grads, *a, out, g, move |x, _| {
                if x >= lo && x <= hi {
                    T::one()
                } else {
                    T::zero()
                }
            })
        }
        Op::MatMul(a, b) => {
            let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
            let (m, k) = (va.shape()[0], va.shape()[1]);
            let n = vb.shape()[1];
            if needs(*a) {
                // dA = dC · Bᵀ
                let ga = buffer(grads, *a, m * k);
                T::gemm(
                    m,
                    n,
                    k,
                    T::one(),
                    g,
                    (n as isize, 1),
                    vb.data(),
                    (1, n as isize),
                    T::one(),
                    ga,
                    (k as isize, 1),
                );
            }
            if needs(*b) {
                // dB = Aᵀ · dC
                let gb = buffer(grads, *b, k * n);
                T::gemm(
                    k,
                    m,
                    n,
                    T::one(),
                    va.data(),
                    (1, k as isize),
                    g,
                    (n as isize, 1),
                    T::one(),
                    gb,
                    (n as isize, 1),
                );
            }
        }
        Op::Reshape(a) => {
            if needs(*a) {
                accumulate(grads, *a, g.to_vec());
            }
        }
        Op::Concat { parts, axis } => {
            let axis = *axis;
            let outer: usize = out_shape[..axis].iter().product();
            let inner: usize = out_shape[axis + 1..].iter().product();
            let total = out_shape[axis];
            let mut offset = 0;
            for &p in parts {
                let width = nodes[p].value.shape()[axis];
                if needs(p) {
                    let buf = buffer(grads, p, nodes[p].value.numel());
                    for o in 0..outer {
                        let src = &g[(o * total + offset) * inner..(o * total + offset + width) * inner];
                        let dst = &mut buf[o * width * inner..(o + 1) * width * inner];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                offset += width;
            }
        }
        Op::Slice { src, axis, start } => {
            if needs(*src) {
                let src_shape = nodes[*src].value.shape();
                let axis = *axis;
                let outer: usize = src_shape[..axis].iter().product();
                let inner: usize = src_shape[axis + 1..].iter().product();
                let (full, width) = (src_shape[axis], out_shape[axis]);
                let buf = buffer(grads, *src, nodes[*src].value.numel());
                for o in 0..outer {
                    let dst = &mut buf[(o * full + start) * inner..(o * full + start + width) * inner];
                    let s = &g[o * width * inner..(o + 1) * width * inner];
                    for (d, &v) in dst.iter_mut().zip(s) {
                        *d += v;
                    }
                }
            }
        }
        Op::SumAll(a) => {
            if needs(*a) {
                accumulate(grads, *a, vec![g[0]; nodes[*a].value.numel()]);
            }
        }
        Op::SumAxis { src, axis } => {
            if needs(*src) {
                let s = nodes[*src].value.shape();
                let outer: usize = s[..*axis].iter().product();
                let inner: usize = s[axis + 1..].iter().product();
                let d = s[*axis];
                let buf = buffer(grads, *src, nodes[*src].value.numel());
                for o in 0..outer {
                    for j in 0..d {
                        for i in 0..inner {
                            buf[(o * d + j) * inner + i] += g[o * inner + i];
                        }
                    }
                }
            }
        }
        Op::Softmax(a) => {
            if needs(*a) {
                let cols = *out_shape.last().unwrap_or(&1);
                let y = out.data();
                let mut contrib = vec![T::zero(); y.len()];
                for ((yr, gr), cr) in y.chunks(cols).zip(g.chunks(cols)).zip(contrib.chunks_mut(cols)) {
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for ((c, &yi), &gi) in cr.iter_mut().zip(yr).zip(gr) {
                        *c = yi * (gi - dot);
                    }
                }
                accumulate(grads, *a, contrib);
            }
        }
        Op::LogSoftmax(a) => {
            if needs(*a) {
                let cols = *out_shape.last().unwrap_or(&1);
                let y = out.data();
                let mut contrib = vec![T::zero(); y.len()];
                for ((yr, gr), cr) in y.chunks(cols).zip(g.chunks(cols)).zip(contrib.chunks_mut(cols)) {
                    let total: T = gr.iter().copied().sum();
                    for ((c, &yi), &gi) in cr.iter_mut().zip(yr).zip(gr) {
                        *c = gi - yi.exp() * total;
                    }
                }
                accumulate(grads, *a, contrib);
            }
        }
        Op::LogSumExp(a) => {
            if needs(*a) {
                let x = &nodes[*a].value;
                let cols = *x.shape().last().unwrap_or(&1);
                let mut sm = softmax_rows(x.data(), cols);
                for (row, &gi) in sm.chunks_mut(cols).zip(g) {
                    for v in row {
                        *v *= gi;
                    }
                }
                accumulate(grads, *a, sm);
            }
        }
        Op::GridSample { image, theta } => {
            let (vi, vt) = (&nodes[*image].value, &nodes[*theta].value);
            let (oh, ow) = (out_shape[1], out_shape[2]);
            let mut gi = needs(*image).then(|| vec![T::zero(); vi.numel()]);
            let mut gt = needs(*theta).then(|| vec![T::zero(); vt.numel()]);
            grid_sample_backward(vi, vt, g, oh, ow, gi.as_deref_mut(), gt.as_deref_mut());
            if let Some(gi) = gi {
                accumulate(grads, *image, gi);
            }
            if let Some(gt) = gt {
                accumulate(grads, *theta, gt);
            }
        }
        Op::DwConv { input, kernels } => {
            let (vi, vk) = (&nodes[*input].value, &nodes[*kernels].value);
            let mut gi = needs(*input).then(|| vec![T::zero(); vi.numel()]);
            let mut gk = needs(*kernels).then(|| vec![T::zero(); vk.numel()]);
            conv2d_depthwise_backward(vi, vk, g, gi.as_deref_mut(), gk.as_deref_mut());
            if let Some(gi) = gi {
                accumulate(grads, *input, gi);
            }
            if let Some(gk) = gk {
                accumulate(grads, *kernels, gk);
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub(crate) fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Tensor<T> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.inner.borrow().nodes[self.id].value.shape().to_vec()
    }

    fn unary(self, op: Op<T>, f: impl Fn(T) -> T) -> Var<'t, T> {
        let v = self.value();
        let needs = self.tape.needs(self.id);
        self.tape.push(v.map(f), op, needs)
    }

    fn binary(
        self,
        other: Var<'t, T>,
        name: &'static str,
        op: fn(usize, usize) -> Op<T>,
        f: impl Fn(T, T) -> T,
    ) -> Result<Var<'t, T>> {
        let oid = self.tape.own(other)?;
        let (a, b) = (self.value(), other.value());
        let shape = checked_broadcast(name, a.shape(), b.shape())?;
        let data = zip_map(a.data(), a.shape(), b.data(), b.shape(), &shape, f);
        let needs = self.tape.needs(self.id) || self.tape.needs(oid);
        Ok(self
            .tape
            .push(Tensor::from_parts(shape, data), op(self.id, oid), needs))
    }

    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "add", Op::Add, |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "sub", Op::Sub, |a, b| a - b)
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "mul", Op::Mul, |a, b| a * b)
    }

    pub fn div(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "div", Op::Div, |a, b| a / b)
    }

    pub fn neg(self) -> Var<'t, T> {
        self.unary(Op::Neg(self.id), |x| -x)
    }

    pub fn scale(self, c: T) -> Var<'t, T> {
        self.unary(Op::Scale(self.id, c), move |x| x * c)
    }

    pub fn add_scalar(self, c: T) -> Var<'t, T> {
        self.unary(Op::Shift(self.id), move |x| x + c)
    }

    pub fn exp(self) -> Var<'t, T> {
        self.unary(Op::Exp(self.id), |x| x.exp())
    }

    /// Natural logarithm; non-positive inputs propagate NaN/-inf.
    pub fn ln(self) -> Var<'t, T> {
        self.unary(Op::Log(self.id), |x| x.ln())
    }

    pub fn tanh(self) -> Var<'t, T> {
        self.unary(Op::Tanh(self.id), |x| x.tanh())
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        self.unary(Op::Sigmoid(self.id), sigmoid)
    }

    pub fn softplus(self) -> Var<'t, T> {
        self.unary(Op::Softplus(self.id), softplus)
    }

    pub fn relu(self) -> Var<'t, T> {
        self.unary(Op::Relu(self.id), |x| x.max(T::zero()))
    }

    pub fn sin(self) -> Var<'t, T> {
        self.unary(Op::Sin(self.id), |x| x.sin())
    }

    pub fn cos(self) -> Var<'t, T> {
        self.unary(Op::Cos(self.id), |x| x.cos())
    }

    pub fn square(self) -> Var<'t, T> {
        self.unary(Op::Square(self.id), |x| x * x)
    }

    /// Clamps into `[lo, hi]`; the gradient is passed only inside the interval.
    pub fn clamp(self, lo: T, hi: T) -> Var<'t, T> {
        self.unary(Op::Clamp(self.id, lo, hi), move |x| x.max(lo).min(hi))
    }

    /// `[m, k] · [k, n] -> [m, n]`.
    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let oid = self.tape.own(other)?;
        let (a, b) = (self.value(), other.value());
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut c = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.data(),
            (k as isize, 1),
            b.data(),
            (n as isize, 1),
            T::zero(),
            &mut c,
            (n as isize, 1),
        );
        let needs = self.tape.needs(self.id) || self.tape.needs(oid);
        Ok(self.tape.push(
            Tensor::from_parts(vec![m, n], c),
            Op::MatMul(self.id, oid),
            needs,
        ))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let v = self.value().reshape(shape)?;
        let needs = self.tape.needs(self.id);
        Ok(self.tape.push(v, Op::Reshape(self.id), needs))
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(self, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>> {
        let v = self.value();
        let s = v.shape();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(Error::invalid(format!(
                "slice axis {axis} [{start}, {}) out of range for shape {s:?}",
                start + len
            )));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let full = s[axis];
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&v.data()[(o * full + start) * inner..(o * full + start + len) * inner]);
        }
        let mut shape = s.to_vec();
        shape[axis] = len;
        let needs = self.tape.needs(self.id);
        Ok(self.tape.push(
            Tensor::from_parts(shape, out),
            Op::Slice {
                src: self.id,
                axis,
                start,
            },
            needs,
        ))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(self) -> Var<'t, T> {
        let v = self.value();
        let total: T = v.data().iter().copied().sum();
        let needs = self.tape.needs(self.id);
        self.tape
            .push(Tensor::scalar(total), Op::SumAll(self.id), needs)
    }

    pub fn mean(self) -> Var<'t, T> {
        let n = T::lit(self.value().numel() as f64);
        self.sum().scale(T::one() / n)
    }

    /// Sum over `axis`, keeping it with size 1.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t, T>> {
        let v = self.value();
        let s = v.shape();
        if axis >= s.len() {
            return Err(Error::invalid(format!("sum axis {axis} out of range for {s:?}")));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let d = s[axis];
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..d {
                for i in 0..inner {
                    out[o * inner + i] += v.data()[(o * d + j) * inner + i];
                }
            }
        }
        let mut shape = s.to_vec();
        shape[axis] = 1;
        let needs = self.tape.needs(self.id);
        Ok(self.tape.push(
            Tensor::from_parts(shape, out),
            Op::SumAxis { src: self.id, axis },
            needs,
        ))
    }

    fn last_axis(&self, v: &Tensor<T>, op: &'static str) -> Result<usize> {
        v.shape().last().copied().ok_or(Error::Shape {
            op,
            lhs: Vec::new(),
            rhs: Vec::new(),
        })
    }

    /// Softmax over the last axis.
    pub fn softmax(self) -> Result<Var<'t, T>> {
        let v = self.value();
        let cols = self.last_axis(&v, "softmax")?;
        let out = softmax_rows(v.data(), cols);
        let needs = self.tape.needs(self.id);
        Ok(self.tape.push(
            Tensor::from_parts(v.shape().to_vec(), out),
            Op::Softmax(self.id),
            needs,
        ))
    }

    pub fn log_softmax(self) -> Result<Var<'t, T>> {
        let v = self.value();
        let cols = self.last_axis(&v, "log_softmax")?;
        let lse = logsumexp_rows(v.data(), cols);
        let out: Vec<T> = v
            .data()
            .chunks(cols)
            .zip(&lse)
            .flat_map(|(row, &l)| row.iter().map(move |&x| x - l))
            .collect();
        let needs = self.tape.needs(self.id);
        Ok(self.tape.push(
            Tensor::from_parts(v.shape().to_vec(), out),
            Op::LogSoftmax(self.id),
            needs,
        ))
    }

    /// Log-sum-exp over the last axis, keeping it with size 1.
    pub fn logsumexp(self) -> Result<Var<'t, T>> {
        let v = self.value();
        let cols = self.last_axis(&v, "logsumexp")?;
        let out = logsumexp_rows(v.data(), cols);
        let mut shape = v.shape().to_vec();
        *shape.last_mut().expect("rank checked") = 1;
        let needs = self.tape.needs(self.id);
        Ok(self
            .tape
            .push(Tensor::from_parts(shape, out), Op::LogSumExp(self.id), needs))
    }

    /// Differentiable bilinear resampling; see [`super::grid_sample`].
    pub fn grid_sample(self, theta: Var<'t, T>, out_h: usize, out_w: usize) -> Result<Var<'t, T>> {
        let tid = self.tape.own(theta)?;
        let value = grid_sample(&self.value(), &theta.value(), out_h, out_w)?;
        let needs = self.tape.needs(self.id) || self.tape.needs(tid);
        Ok(self.tape.push(
            value,
            Op::GridSample {
                image: self.id,
                theta: tid,
            },
            needs,
        ))
    }

    /// Depth-wise convolution of `self` (`[b,c,h,w]`) with per-sample kernels.
    pub fn conv2d_depthwise(self, kernels: Var<'t, T>) -> Result<Var<'t, T>> {
        let kid = self.tape.own(kernels)?;
        let value = conv2d_depthwise(&self.value(), &kernels.value())?;
        let needs = self.tape.needs(self.id) || self.tape.needs(kid);
        Ok(self.tape.push(
            value,
            Op::DwConv {
                input: self.id,
                kernels: kid,
            },
            needs,
        ))
    }

    /// Number of elements.
    pub fn numel(&self) -> usize {
        numel_of(&self.shape())
    }
}
