//! Reverse-mode recording of primitive applications.
//!
//! A [`Tape`] owns the value of every node it records. Nodes are appended in
//! evaluation order, so the node list is already topologically sorted and
//! [`Tape::backward`] is a single reverse sweep. Gradients of a node consumed
//! by several successors are summed.

use super::conv::{conv2d, conv2d_backward, conv_transpose2d, conv_transpose2d_backward};
use super::layers::{self, BatchNormSaved, BatchNormState, Mode};
use crate::error::{Error, Result};
use crate::objectives::{binary_cross_entropy, categorical_cross_entropy, LabelTensor};
use crate::rng::RngStream;
use crate::tensor::{Scalar, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d { x: Var, k: Var, b: Var, stride: usize, pad: usize },
    ConvTranspose2d { x: Var, k: Var, stride: usize },
    MaxPool2d { x: Var, argmax: Vec<u32> },
    Relu { x: Var },
    BatchNorm2d { x: Var, gamma: Var, beta: Var, saved: BatchNormSaved<T> },
    Dropout { x: Var, mask: Option<Vec<T>> },
    Concat { a: Var, b: Var },
    Softmax { x: Var },
    Dense { x: Var, w: Var, b: Var },
    Reshape { x: Var },
    SelectChannel { x: Var, channel: usize },
    /// Loss nodes keep the gradient of the loss with respect to their input.
    Loss { x: Var, grad: Tensor<T> },
    Sum { x: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, factor: T },
    WeightedSum { x: Var, weights: Tensor<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads[v.0].take()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A constant: no gradient is propagated into it.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A differentiable leaf, such as a parameter or a checked input.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn conv2d(&mut self, x: Var, k: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let out = conv2d(self.value(x), self.value(k), self.value(b), stride, pad)?;
        let rg = self.any_grad(&[x, k, b]);
        Ok(self.push(out, Op::Conv2d { x, k, b, stride, pad }, rg))
    }

    pub fn conv_transpose2d(&mut self, x: Var, k: Var, stride: usize) -> Result<Var> {
        let out = conv_transpose2d(self.value(x), self.value(k), stride)?;
        let rg = self.any_grad(&[x, k]);
        Ok(self.push(out, Op::ConvTranspose2d { x, k, stride }, rg))
    }

    pub fn maxpool2d(&mut self, x: Var, window: usize) -> Result<Var> {
        let (out, argmax) = layers::maxpool2d(self.value(x), window)?;
        let rg = self.any_grad(&[x]);
        let argmax = if rg { argmax } else { Vec::new() };
        Ok(self.push(out, Op::MaxPool2d { x, argmax }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = layers::relu(self.value(x));
        let rg = self.any_grad(&[x]);
        self.push(out, Op::Relu { x }, rg)
    }

    pub fn batchnorm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: Mode,
        state: &mut BatchNormState<T>,
    ) -> Result<Var> {
        let (out, saved) = layers::batchnorm2d(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            mode,
            state,
        )?;
        let rg = self.any_grad(&[x, gamma, beta]);
        Ok(self.push(out, Op::BatchNorm2d { x, gamma, beta, saved }, rg))
    }

    pub fn batchnorm2d_infer(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &BatchNormState<T>,
    ) -> Result<Var> {
        let (out, saved) =
            layers::batchnorm2d_infer(self.value(x), self.value(gamma), self.value(beta), state)?;
        let rg = self.any_grad(&[x, gamma, beta]);
        Ok(self.push(out, Op::BatchNorm2d { x, gamma, beta, saved }, rg))
    }

    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut RngStream, mode: Mode) -> Result<Var> {
        let (out, mask) = layers::dropout(self.value(x), rate, rng, mode)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, Op::Dropout { x, mask }, rg))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = layers::concat_channels(self.value(a), self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Concat { a, b }, rg))
    }

    pub fn softmax_channels(&mut self, x: Var) -> Result<Var> {
        let out = layers::softmax_channels(self.value(x))?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, Op::Softmax { x }, rg))
    }

    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let out = layers::dense(self.value(x), self.value(w), self.value(b))?;
        let rg = self.any_grad(&[x, w, b]);
        Ok(self.push(out, Op::Dense { x, w, b }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, Op::Reshape { x }, rg))
    }

    pub fn select_channel(&mut self, x: Var, channel: usize) -> Result<Var> {
        let out = layers::select_channel(self.value(x), channel)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, Op::SelectChannel { x, channel }, rg))
    }

    /// Fused softmax + categorical cross-entropy from `[N,H,W,C]` logits.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &LabelTensor) -> Result<Var> {
        let probs = layers::softmax_channels(self.value(logits))?;
        let (loss, grad) = categorical_cross_entropy(&probs, targets)?;
        let rg = self.any_grad(&[logits]);
        Ok(self.push(Tensor::scalar(T::from_f64(loss)), Op::Loss { x: logits, grad }, rg))
    }

    /// Binary cross-entropy on the class-0 probability channel.
    pub fn binary_cross_entropy(&mut self, s1: Var, targets: &LabelTensor) -> Result<Var> {
        let (loss, grad) = binary_cross_entropy(self.value(s1), targets)?;
        let rg = self.any_grad(&[s1]);
        Ok(self.push(Tensor::scalar(T::from_f64(loss)), Op::Loss { x: s1, grad }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.any_grad(&[x]);
        self.push(out, Op::Sum { x }, rg)
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::dim(format!(
                "mul needs equal shapes, got {:?} and {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&p, &q)| p * q).collect();
        let out = Tensor::new(va.shape(), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Mul { a, b }, rg))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let out = self.value(x).map(|v| v * factor);
        let rg = self.any_grad(&[x]);
        self.push(out, Op::Scale { x, factor }, rg)
    }

    /// `sum(x * weights)` for a constant weight tensor.
    pub fn weighted_sum(&mut self, x: Var, weights: Tensor<T>) -> Result<Var> {
        let v = self.value(x);
        if v.shape() != weights.shape() {
            return Err(Error::dim(format!(
                "weighted_sum weights {:?} do not match {:?}",
                weights.shape(),
                v.shape()
            )));
        }
        let total: T = v.data().iter().zip(weights.data()).map(|(&a, &b)| a * b).sum();
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::scalar(total), Op::WeightedSum { x, weights }, rg))
    }

    /// Reverse sweep from a scalar `loss`, seeding its gradient with 1.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let value = self.value(loss);
        if value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(value.shape(), T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.propagate(node, &dy, &mut grads)?;
            grads[i] = Some(dy);
        }
        for (g, n) in grads.iter_mut().zip(&self.nodes) {
            if !matches!(n.op, Op::Leaf) {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<T>, dy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let mut acc = |v: Var, g: Tensor<T>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, k, b, stride, pad } => {
                let (dx, dk, db) =
                    conv2d_backward(self.value(*x), self.value(*k), dy, *stride, *pad)?;
                acc(*x, dx);
                acc(*k, dk);
                acc(*b, db);
            }
            Op::ConvTranspose2d { x, k, stride } => {
                let (dx, dk) = conv_transpose2d_backward(self.value(*x), self.value(*k), dy, *stride)?;
                acc(*x, dx);
                acc(*k, dk);
            }
            Op::MaxPool2d { x, argmax } => {
                acc(*x, layers::maxpool2d_backward(self.value(*x).shape(), argmax, dy));
            }
            Op::Relu { x } => acc(*x, layers::relu_backward(self.value(*x), dy)),
            Op::BatchNorm2d { x, gamma, beta, saved } => {
                let (dx, dg, db) = layers::batchnorm2d_backward(saved, self.value(*gamma), dy);
                acc(*x, dx);
                acc(*gamma, dg);
                acc(*beta, db);
            }
            Op::Dropout { x, mask } => match mask {
                None => acc(*x, dy.clone()),
                Some(m) => {
                    let d = dy.data().iter().zip(m).map(|(&g, &s)| g * s).collect();
                    acc(*x, Tensor::new(dy.shape(), d)?);
                }
            },
            Op::Concat { a, b } => {
                let ca = self.value(*a).shape()[3];
                let (ga, gb) = layers::split_channels(dy, ca)?;
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::Softmax { x } => {
                acc(*x, layers::softmax_channels_backward(&node.value, dy));
            }
            Op::Dense { x, w, b } => {
                let (dx, dw, db) = layers::dense_backward(self.value(*x), self.value(*w), dy);
                acc(*x, dx);
                acc(*w, dw);
                acc(*b, db);
            }
            Op::Reshape { x } => acc(*x, dy.clone().reshape(self.value(*x).shape())?),
            Op::SelectChannel { x, channel } => {
                let shape = self.value(*x).shape();
                let c = *shape.last().unwrap();
                let mut d = Tensor::zeros(shape);
                for (px, &g) in d.data_mut().chunks_exact_mut(c).zip(dy.data()) {
                    px[*channel] = g;
                }
                acc(*x, d);
            }
            Op::Loss { x, grad } => {
                let s = dy.data()[0];
                acc(*x, grad.map(|v| v * s));
            }
            Op::Sum { x } => {
                let s = dy.data()[0];
                acc(*x, Tensor::full(self.value(*x).shape(), s));
            }
            Op::Mul { a, b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let ga = dy.data().iter().zip(vb.data()).map(|(&g, &q)| g * q).collect();
                let gb = dy.data().iter().zip(va.data()).map(|(&g, &p)| g * p).collect();
                acc(*a, Tensor::new(va.shape(), ga)?);
                acc(*b, Tensor::new(vb.shape(), gb)?);
            }
            Op::Scale { x, factor } => acc(*x, dy.map(|v| v * *factor)),
            Op::WeightedSum { x, weights } => {
                let s = dy.data()[0];
                acc(*x, weights.map(|w| w * s));
            }
        }
        Ok(())
    }
}
