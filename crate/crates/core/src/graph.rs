//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every op as it is applied, so node ids are already in
//! topological order: an op can only consume nodes that exist. [`Graph::backward`]
//! walks the tape once in reverse and returns a [`Gradients`] table.
//!
//! Image tensors carry a leading batch axis (`N×H×W×C`); vectors are `N×n`.
//!
//! ```
//! use dinn::graph::Graph;
//! use dinn::tensor::Tensor;
//!
//! let x = Tensor::<f64>::new(vec![2], vec![1.0, 2.0]).unwrap();
//! let mut g = Graph::new();
//! let xid = g.variable(x);
//! let loss = g.sum_squares(xid);
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.get(xid).unwrap().data(), &[2.0, 4.0]);
//! ```

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::tensor::{fmt_shape, Real, Tensor};

/// Position of a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    /// Leaky ReLU with negative-side slope `alpha`.
    LeakyRelu(f64),
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu(a) => {
                if x >= 0.0 {
                    x
                } else {
                    a * x
                }
            }
            Activation::Sigmoid => sigmoid(x),
        }
    }
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    // Evaluated on the branch where exp cannot overflow.
    if x >= T::ZERO {
        T::ONE / (T::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::ONE + e)
    }
}

enum Value<'a, T> {
    Owned(Tensor<T>),
    Borrowed(&'a Tensor<T>),
}

impl<T> Value<'_, T> {
    fn get(&self) -> &Tensor<T> {
        match self {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }
}

enum Op<T> {
    Leaf,
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        geom: ConvGeom,
    },
    Dense {
        input: NodeId,
        weights: NodeId,
        bias: NodeId,
    },
    ResizeNearest {
        input: NodeId,
        target: (usize, usize),
    },
    Activate {
        input: NodeId,
        kind: Activation,
    },
    Softmax {
        input: NodeId,
    },
    GlobalAvgPool {
        input: NodeId,
    },
    ScaleChannels {
        input: NodeId,
        gate: NodeId,
    },
    Reshape {
        input: NodeId,
    },
    BinaryCrossEntropy {
        pred: NodeId,
        target: Tensor<T>,
        scale: T,
        eps: T,
    },
    Sum {
        input: NodeId,
    },
    SumSquares {
        input: NodeId,
    },
    Combine {
        a: NodeId,
        ca: T,
        b: NodeId,
        cb: T,
    },
}

struct Node<'a, T> {
    value: Value<'a, T>,
    op: Op<T>,
    needs_grad: bool,
}

/// A computation tape. Parameters can be borrowed for the lifetime `'a`
/// instead of copied.
pub struct Graph<'a, T> {
    nodes: Vec<Node<'a, T>>,
}

impl<T: Real> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

fn expect_rank(op: &str, t: &Tensor<impl Real>, rank: usize) -> Result<()> {
    if t.rank() != rank {
        return Err(Error::shape(op, format!("rank-{rank} tensor"), fmt_shape(t.shape())));
    }
    Ok(())
}

impl<'a, T: Real> Graph<'a, T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Value<'a, T>, op: Op<T>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[NodeId]) -> NodeId {
        let needs_grad = inputs.iter().any(|&i| self.nodes[i.0].needs_grad);
        self.push(Value::Owned(value), op, needs_grad)
    }

    /// For every element entering a ReLU or leaky ReLU, in tape order,
    /// whether it lies on the positive side. Two evaluations with equal
    /// patterns are on the same linear piece of every kink.
    pub fn branch_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if let Op::Activate {
                input,
                kind: Activation::Relu | Activation::LeakyRelu(_),
            } = node.op
            {
                out.extend(self.value(input).data().iter().map(|&v| v > T::ZERO));
            }
        }
        out
    }

    /// Data that gradients do not flow into.
    pub fn input(&mut self, t: Tensor<T>) -> NodeId {
        self.push(Value::Owned(t), Op::Leaf, false)
    }

    /// A borrowed trainable tensor.
    pub fn param(&mut self, t: &'a Tensor<T>) -> NodeId {
        self.push(Value::Borrowed(t), Op::Leaf, true)
    }

    /// An owned trainable tensor.
    pub fn variable(&mut self, t: Tensor<T>) -> NodeId {
        self.push(Value::Owned(t), Op::Leaf, true)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        self.nodes[id.0].value.get()
    }

    /// `N×H×W×Cin` ⊛ `kh×kw×Cin×Cout` + bias, "same" padding with ceil output
    /// extents.
    pub fn conv2d(&mut self, input: NodeId, kernel: NodeId, bias: NodeId, stride: (usize, usize)) -> Result<NodeId> {
        let (x, k, b) = (self.value(input), self.value(kernel), self.value(bias));
        expect_rank("conv2d input", x, 4)?;
        expect_rank("conv2d kernel", k, 4)?;
        if x.shape()[3] != k.shape()[2] {
            return Err(Error::shape(
                "conv2d",
                format!("input channels {} (kernel {})", k.shape()[2], fmt_shape(k.shape())),
                format!("{} (input {})", x.shape()[3], fmt_shape(x.shape())),
            ));
        }
        if b.shape() != [k.shape()[3]] {
            return Err(Error::shape(
                "conv2d bias",
                k.shape()[3].to_string(),
                fmt_shape(b.shape()),
            ));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be positive".into()));
        }
        let geom = ConvGeom::new(x.shape(), k.shape(), stride);
        let out = kernels::conv2d_forward(&geom, x.data(), k.data(), b.data());
        let t = Tensor::new(vec![geom.n, geom.ho, geom.wo, geom.cout], out)?;
        Ok(self.push_op(
            t,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            },
            &[input, kernel, bias],
        ))
    }

    /// Fully connected layer over each sample flattened row-major.
    pub fn dense(&mut self, input: NodeId, weights: NodeId, bias: NodeId) -> Result<NodeId> {
        let (x, w, b) = (self.value(input), self.value(weights), self.value(bias));
        expect_rank("dense weights", w, 2)?;
        let (n, m) = (w.shape()[0], w.shape()[1]);
        if x.rank() < 2 {
            return Err(Error::shape("dense input", "batched N×…", fmt_shape(x.shape())));
        }
        let batch = x.shape()[0];
        if x.len() != batch * n {
            return Err(Error::shape(
                "dense",
                format!("{n} features per sample"),
                format!("{} ({})", x.len() / batch, fmt_shape(x.shape())),
            ));
        }
        if b.shape() != [m] {
            return Err(Error::shape("dense bias", m.to_string(), fmt_shape(b.shape())));
        }
        let out = kernels::dense_forward(batch, n, m, x.data(), w.data(), b.data());
        let t = Tensor::new(vec![batch, m], out)?;
        Ok(self.push_op(t, Op::Dense { input, weights, bias }, &[input, weights, bias]))
    }

    /// Nearest-neighbour upsampling of an `N×H×W×C` tensor.
    pub fn resize_nearest(&mut self, input: NodeId, target: (usize, usize)) -> Result<NodeId> {
        let x = self.value(input);
        expect_rank("resize_nearest", x, 4)?;
        let s = x.shape();
        if target.0 < s[1] || target.1 < s[2] {
            return Err(Error::InvalidArgument(format!(
                "resize_nearest only upsamples: {}×{} -> {}×{}",
                s[1], s[2], target.0, target.1
            )));
        }
        let out = kernels::resize_forward(s, target, x.data());
        let t = Tensor::new(vec![s[0], target.0, target.1, s[3]], out)?;
        Ok(self.push_op(t, Op::ResizeNearest { input, target }, &[input]))
    }

    pub fn activation(&mut self, input: NodeId, kind: Activation) -> NodeId {
        let x = self.value(input);
        let t = match kind {
            Activation::Relu => x.map(|v| v.max(T::ZERO)),
            Activation::LeakyRelu(a) => {
                let a = T::from_f64(a);
                x.map(|v| if v >= T::ZERO { v } else { a * v })
            }
            Activation::Sigmoid => x.map(sigmoid),
        };
        self.push_op(t, Op::Activate { input, kind }, &[input])
    }

    /// Softmax over the last axis, max-shifted.
    pub fn softmax(&mut self, input: NodeId) -> NodeId {
        let x = self.value(input);
        let width = *x.shape().last().unwrap_or(&1);
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(width) {
            softmax_in_place(row);
        }
        let t = Tensor::new(x.shape().to_vec(), out).expect("same shape");
        self.push_op(t, Op::Softmax { input }, &[input])
    }

    /// Per-channel spatial mean: `N×H×W×C -> N×C`.
    pub fn global_avg_pool(&mut self, input: NodeId) -> Result<NodeId> {
        let x = self.value(input);
        expect_rank("global_avg_pool", x, 4)?;
        let s = x.shape();
        let (n, hw, c) = (s[0], s[1] * s[2], s[3]);
        let inv = T::from_f64(1.0 / hw as f64);
        let mut out = Vec::with_capacity(n * c);
        for sample in x.data().chunks(hw * c) {
            out.extend(kernels::column_sums(sample, c).into_iter().map(|v| v * inv));
        }
        let t = Tensor::new(vec![n, c], out)?;
        Ok(self.push_op(t, Op::GlobalAvgPool { input }, &[input]))
    }

    /// Multiplies channel `c` of sample `n` by `gate[n, c]`.
    pub fn scale_channels(&mut self, input: NodeId, gate: NodeId) -> Result<NodeId> {
        let (x, g) = (self.value(input), self.value(gate));
        expect_rank("scale_channels", x, 4)?;
        let s = x.shape();
        if g.shape() != [s[0], s[3]] {
            return Err(Error::shape(
                "scale_channels gate",
                fmt_shape(&[s[0], s[3]]),
                fmt_shape(g.shape()),
            ));
        }
        let c = s[3];
        let hwc = s[1] * s[2] * c;
        let mut out = x.data().to_vec();
        for (sample, gate) in out.chunks_mut(hwc).zip(g.data().chunks(c)) {
            for px in sample.chunks_mut(c) {
                for (v, &gv) in px.iter_mut().zip(gate) {
                    *v *= gv;
                }
            }
        }
        let t = Tensor::new(s.to_vec(), out)?;
        Ok(self.push_op(t, Op::ScaleChannels { input, gate }, &[input, gate]))
    }

    pub fn reshape(&mut self, input: NodeId, shape: &[usize]) -> Result<NodeId> {
        let t = self.value(input).clone().reshape(shape)?;
        Ok(self.push_op(t, Op::Reshape { input }, &[input]))
    }

    /// `scale · Σ [Y·ln(1/y) + (1−Y)·ln(1/(1−y))]` with `y` clipped to
    /// `[eps, 1−eps]`. Gradient is zero where clipping was active.
    pub fn binary_cross_entropy(&mut self, pred: NodeId, target: Tensor<T>, scale: T, eps: T) -> Result<NodeId> {
        let y = self.value(pred);
        if y.len() != target.len() {
            return Err(Error::shape(
                "binary_cross_entropy",
                fmt_shape(y.shape()),
                fmt_shape(target.shape()),
            ));
        }
        let hi = T::ONE - eps;
        let total: f64 = y
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| {
                let p = p.max(eps).min(hi);
                -(t * p.ln() + (T::ONE - t) * (T::ONE - p).ln()).to_f64()
            })
            .sum();
        let value = Tensor::scalar(T::from_f64(total) * scale);
        Ok(self.push_op(
            value,
            Op::BinaryCrossEntropy {
                pred,
                target,
                scale,
                eps,
            },
            &[pred],
        ))
    }

    pub fn sum(&mut self, input: NodeId) -> NodeId {
        let s: f64 = self.value(input).data().iter().map(|v| v.to_f64()).sum();
        self.push_op(Tensor::scalar(T::from_f64(s)), Op::Sum { input }, &[input])
    }

    pub fn sum_squares(&mut self, input: NodeId) -> NodeId {
        let s = self.value(input).norm_sq();
        self.push_op(Tensor::scalar(T::from_f64(s)), Op::SumSquares { input }, &[input])
    }

    /// `ca·a + cb·b` for equally shaped nodes.
    pub fn combine(&mut self, a: NodeId, ca: T, b: NodeId, cb: T) -> Result<NodeId> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::shape("combine", fmt_shape(x.shape()), fmt_shape(y.shape())));
        }
        let data = x.data().iter().zip(y.data()).map(|(&u, &v)| ca * u + cb * v).collect();
        let t = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push_op(t, Op::Combine { a, ca, b, cb }, &[a, b]))
    }

    /// Reverse pass from a scalar `loss`.
    ///
    /// Every trainable leaf gets an entry, zero-filled when the loss does not
    /// depend on it.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::shape("backward", "scalar loss", fmt_shape(lv.shape())));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::ONE));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(dout) = grads[idx].take() else {
                continue;
            };
            for (target, g) in self.local_grads(node, &dout) {
                match &mut grads[target.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(dout);
            }
        }

        for (idx, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.needs_grad && grads[idx].is_none() {
                grads[idx] = Some(Tensor::zeros(node.value.get().shape()));
            } else if !matches!(node.op, Op::Leaf) {
                grads[idx] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn local_grads(&self, node: &Node<'a, T>, dout: &Tensor<T>) -> Vec<(NodeId, Tensor<T>)> {
        let mut out = Vec::new();
        let shaped = |id: NodeId, data: Vec<T>| {
            Tensor::new(self.value(id).shape().to_vec(), data).expect("gradient matches input shape")
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            } => {
                if self.wants(*input) {
                    let dx = kernels::conv2d_backward_input(geom, dout.data(), self.value(*kernel).data());
                    out.push((*input, shaped(*input, dx)));
                }
                if self.wants(*kernel) || self.wants(*bias) {
                    let (dk, db) = kernels::conv2d_backward_params(geom, self.value(*input).data(), dout.data());
                    out.push((*kernel, shaped(*kernel, dk)));
                    out.push((*bias, shaped(*bias, db)));
                }
            }
            Op::Dense { input, weights, bias } => {
                let w = self.value(*weights);
                let (n, m) = (w.shape()[0], w.shape()[1]);
                let batch = dout.shape()[0];
                if self.wants(*input) {
                    let dx = kernels::dense_backward_input(batch, n, m, dout.data(), w.data());
                    out.push((*input, shaped(*input, dx)));
                }
                if self.wants(*weights) {
                    let dw = kernels::dense_backward_weights(batch, n, m, self.value(*input).data(), dout.data());
                    out.push((*weights, shaped(*weights, dw)));
                }
                if self.wants(*bias) {
                    out.push((*bias, shaped(*bias, kernels::column_sums(dout.data(), m))));
                }
            }
            Op::ResizeNearest { input, target } => {
                let dx = kernels::resize_backward(self.value(*input).shape(), *target, dout.data());
                out.push((*input, shaped(*input, dx)));
            }
            Op::Activate { input, kind } => {
                let x = self.value(*input).data();
                let y = node.value.get().data();
                let d = dout.data();
                let dx: Vec<T> = match kind {
                    Activation::Relu => x
                        .iter()
                        .zip(d)
                        .map(|(&xv, &g)| if xv >= T::ZERO { g } else { T::ZERO })
                        .collect(),
                    Activation::LeakyRelu(a) => {
                        let a = T::from_f64(*a);
                        x.iter()
                            .zip(d)
                            .map(|(&xv, &g)| if xv >= T::ZERO { g } else { a * g })
                            .collect()
                    }
                    Activation::Sigmoid => y.iter().zip(d).map(|(&s, &g)| g * s * (T::ONE - s)).collect(),
                };
                out.push((*input, shaped(*input, dx)));
            }
            Op::Softmax { input } => {
                let y = node.value.get();
                let width = *y.shape().last().unwrap_or(&1);
                let mut dx = Vec::with_capacity(y.len());
                for (s, g) in y.data().chunks(width).zip(dout.data().chunks(width)) {
                    let dot: T = s.iter().zip(g).map(|(&a, &b)| a * b).sum();
                    dx.extend(s.iter().zip(g).map(|(&a, &b)| a * (b - dot)));
                }
                out.push((*input, shaped(*input, dx)));
            }
            Op::GlobalAvgPool { input } => {
                let s = self.value(*input).shape();
                let (hw, c) = (s[1] * s[2], s[3]);
                let inv = T::from_f64(1.0 / hw as f64);
                let mut dx = Vec::with_capacity(s[0] * hw * c);
                for g in dout.data().chunks(c) {
                    for _ in 0..hw {
                        dx.extend(g.iter().map(|&v| v * inv));
                    }
                }
                out.push((*input, shaped(*input, dx)));
            }
            Op::ScaleChannels { input, gate } => {
                let x = self.value(*input);
                let gv = self.value(*gate);
                let c = x.shape()[3];
                let hwc = x.len() / x.shape()[0];
                if self.wants(*input) {
                    let mut dx = dout.data().to_vec();
                    for (sample, gate) in dx.chunks_mut(hwc).zip(gv.data().chunks(c)) {
                        for px in sample.chunks_mut(c) {
                            for (v, &g) in px.iter_mut().zip(gate) {
                                *v *= g;
                            }
                        }
                    }
                    out.push((*input, shaped(*input, dx)));
                }
                if self.wants(*gate) {
                    let mut dg = vec![T::ZERO; gv.len()];
                    for ((acc, xs), ds) in dg.chunks_mut(c).zip(x.data().chunks(hwc)).zip(dout.data().chunks(hwc)) {
                        for (xp, dp) in xs.chunks(c).zip(ds.chunks(c)) {
                            for ((a, &xv), &dv) in acc.iter_mut().zip(xp).zip(dp) {
                                *a += xv * dv;
                            }
                        }
                    }
                    out.push((*gate, shaped(*gate, dg)));
                }
            }
            Op::Reshape { input } => {
                out.push((*input, shaped(*input, dout.data().to_vec())));
            }
            Op::BinaryCrossEntropy {
                pred,
                target,
                scale,
                eps,
            } => {
                let g = dout.data()[0] * *scale;
                let hi = T::ONE - *eps;
                let dx = self
                    .value(*pred)
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(&p, &t)| {
                        if p < *eps || p > hi {
                            T::ZERO
                        } else {
                            g * ((T::ONE - t) / (T::ONE - p) - t / p)
                        }
                    })
                    .collect();
                out.push((*pred, shaped(*pred, dx)));
            }
            Op::Sum { input } => {
                let g = dout.data()[0];
                out.push((*input, Tensor::full(self.value(*input).shape(), g)));
            }
            Op::SumSquares { input } => {
                let g = dout.data()[0];
                let two = T::from_f64(2.0);
                out.push((*input, self.value(*input).map(|v| two * v * g)));
            }
            Op::Combine { a, ca, b, cb } => {
                if self.wants(*a) {
                    out.push((*a, dout.map(|g| g * *ca)));
                }
                if self.wants(*b) {
                    out.push((*b, dout.map(|g| g * *cb)));
                }
            }
        }
        out.retain(|(id, _)| self.wants(*id));
        out
    }
}

pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(row[0], |a, b| a.max(b));
    let mut total = T::ZERO;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v = *v / total;
    }
}

/// Gradients from one [`Graph::backward`] call, indexed by leaf node.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a trainable leaf; `None` for data inputs and interior
    /// nodes.
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor<T>> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

/// Central-difference gradient of `f` at `theta`, one coordinate at a time.
pub fn finite_diff_grad<T: Real>(mut f: impl FnMut(&Tensor<T>) -> f64, theta: &Tensor<T>, eps: f64) -> Tensor<T> {
    let mut probe = theta.clone();
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let orig = theta.data()[i];
        probe.data_mut()[i] = T::from_f64(orig.to_f64() + eps);
        let plus = f(&probe);
        probe.data_mut()[i] = T::from_f64(orig.to_f64() - eps);
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        grad.push(T::from_f64((plus - minus) / (2.0 * eps)));
    }
    Tensor::new(theta.shape().to_vec(), grad).expect("same shape as theta")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn conv_output_extents() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::zeros(&[1, 30, 20, 4]));
        let k = g.variable(Tensor::zeros(&[3, 3, 4, 8]));
        let b = g.variable(Tensor::zeros(&[8]));
        let y = g.conv2d(x, k, b, (2, 2)).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 15, 10, 8]);

        let x = g.input(Tensor::zeros(&[1, 8, 5, 32]));
        let k = g.variable(Tensor::zeros(&[3, 3, 32, 128]));
        let b = g.variable(Tensor::zeros(&[128]));
        let y = g.conv2d(x, k, b, (2, 2)).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 4, 3, 128]);
    }

    #[test]
    fn conv_sums_window() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::full(&[1, 3, 3, 1], 1.0));
        let k = g.variable(Tensor::full(&[3, 3, 1, 1], 1.0));
        let b = g.variable(Tensor::zeros(&[1]));
        let y = g.conv2d(x, k, b, (1, 1)).unwrap();
        let v = g.value(y).data();
        assert_eq!(v[4], 9.0);
        assert_eq!(v[0], 4.0);
        assert_eq!(v, &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::zeros(&[1, 5, 5, 3]));
        let k = g.variable(Tensor::zeros(&[3, 3, 4, 2]));
        let b = g.variable(Tensor::zeros(&[2]));
        let err = g.conv2d(x, k, b, (1, 1)).unwrap_err().to_string();
        assert!(err.contains("3×3×4×2") && err.contains("1×5×5×3"), "{err}");
    }

    #[test]
    fn dense_examples() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::full(&[1, 4, 3, 128], 0.5));
        let w = g.variable(Tensor::zeros(&[1536, 1024]));
        let b = g.variable(Tensor::from_fn(&[1024], |i| i as f64));
        let y = g.dense(x, w, b).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1024]);
        assert_eq!(g.value(y).data(), g.value(b).data());

        let x = g.input(t(&[1, 2], &[1.0, 2.0]));
        let w = g.variable(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b = g.variable(Tensor::zeros(&[2]));
        let y = g.dense(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0]);

        let w = g.variable(Tensor::zeros(&[3, 2]));
        assert!(g.dense(x, w, b).is_err());
    }

    #[test]
    fn resize_examples() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::zeros(&[1, 8, 10, 128]));
        let y = g.resize_nearest(x, (15, 20)).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 15, 20, 128]);

        let x = g.input(Tensor::from_fn(&[1, 2, 3, 1], |i| i as f64));
        let y = g.resize_nearest(x, (2, 3)).unwrap();
        assert_eq!(g.value(y), g.value(x));

        let x = g.input(t(&[1, 1, 1, 1], &[7.5]));
        let y = g.resize_nearest(x, (2, 2)).unwrap();
        assert_eq!(g.value(y).data(), &[7.5; 4]);

        assert!(g.resize_nearest(y, (1, 2)).is_err());
    }

    #[test]
    fn activation_examples() {
        let mut g = Graph::<f64>::new();
        let x = g.input(t(&[3], &[-1.0, 2.0, 0.0]));
        let r = g.activation(x, Activation::Relu);
        assert_eq!(g.value(r).data(), &[0.0, 2.0, 0.0]);
        let l = g.activation(x, Activation::LeakyRelu(0.2));
        assert_eq!(g.value(l).data(), &[-0.2, 2.0, 0.0]);
        let s = g.activation(x, Activation::Sigmoid);
        assert_eq!(g.value(s).data()[2], 0.5);
    }

    #[test]
    fn kink_subgradient_is_positive_branch() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(Tensor::zeros(&[2]));
        let r = g.activation(x, Activation::Relu);
        let l = g.activation(x, Activation::LeakyRelu(0.2));
        let a = g.sum(r);
        let b = g.sum(l);
        let loss = g.combine(a, 1.0, b, 1.0).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn softmax_examples() {
        let mut g = Graph::<f64>::new();
        let x = g.input(t(&[1, 4], &[3.0; 4]));
        let s = g.softmax(x);
        assert_eq!(g.value(s).data(), &[0.25; 4]);

        let x = g.input(t(&[1, 2], &[0.0, 3f64.ln()]));
        let s = g.softmax(x);
        let v = g.value(s).data();
        assert!((v[0] - 0.25).abs() < 1e-12 && (v[1] - 0.75).abs() < 1e-12);

        let x = g.input(t(&[1, 3], &[1000.0, 1001.0, 999.0]));
        let s = g.softmax(x);
        assert!(g.value(s).all_finite());
    }

    #[test]
    fn global_avg_pool_examples() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::from_fn(&[1, 4, 3, 1], |i| (i + 1) as f64));
        let p = g.global_avg_pool(x).unwrap();
        assert_eq!(g.value(p).data(), &[6.5]);

        let x = g.input(Tensor::full(&[1, 2, 2, 3], 4.0));
        let p = g.global_avg_pool(x).unwrap();
        assert_eq!(g.value(p).data(), &[4.0; 3]);

        let x = g.input(Tensor::zeros(&[1, 2, 2, 3]));
        let p = g.global_avg_pool(x).unwrap();
        assert_eq!(g.value(p).data(), &[0.0; 3]);
    }

    #[test]
    fn backward_examples() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(t(&[2], &[1.0, 2.0]));
        let unused = g.variable(t(&[3], &[5.0, 6.0, 7.0]));
        let loss = g.sum_squares(x);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0]);
        assert_eq!(grads.get(unused).unwrap().data(), &[0.0; 3]);

        assert!(g.backward(x).is_err());
    }

    #[test]
    fn finite_difference_examples() {
        let x = t(&[2], &[1.0, 2.0]);
        let grad = finite_diff_grad(|v| v.norm_sq(), &x, 1e-5);
        assert!((grad.data()[0] - 2.0).abs() < 1e-8);
        assert!((grad.data()[1] - 4.0).abs() < 1e-8);

        let grad = finite_diff_grad(|_| 3.0, &x, 1e-5);
        assert_eq!(grad.data(), &[0.0, 0.0]);

        let x = Tensor::<f64>::zeros(&[3]);
        let grad = finite_diff_grad(|v| v.data().iter().map(|&u| sigmoid(u)).sum(), &x, 1e-5);
        for g in grad.data() {
            assert!((g - 0.25).abs() < 1e-9);
        }
    }

    #[test]
    fn branch_pattern_covers_piecewise_activations_only() {
        let mut g = Graph::<f64>::new();
        let x = g.input(t(&[4], &[-1.0, 0.0, 2.0, -3.0]));
        let r = g.activation(x, Activation::Relu);
        g.activation(x, Activation::Sigmoid);
        g.activation(r, Activation::LeakyRelu(0.2));
        assert_eq!(
            g.branch_pattern(),
            [false, false, true, false, false, false, true, false]
        );
    }
}
