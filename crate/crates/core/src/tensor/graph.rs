use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::conv::ConvGeom;
use crate::tensor::params::ParamStore;
use crate::tensor::resize::Taps;
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Conv {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeom,
        /// im2col buffers of every sample, kept only when the kernel needs a gradient.
        cols: Option<Vec<T>>,
    },
    Deconv {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        /// Geometry of the adjoint convolution (deconv output -> deconv input).
        geom: ConvGeom,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Mean(Var),
    Mse(Var, Var),
    Bce {
        input: Var,
        target: T,
        eps: T,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
    Resize {
        input: Var,
        rows: Taps<T>,
        cols: Taps<T>,
    },
    FramesToVolume {
        input: Var,
        frames: usize,
        channels: usize,
    },
}

#[derive(Debug)]
pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) grad: Option<Tensor<T>>,
    pub(crate) requires_grad: bool,
    pub(crate) op: Op<T>,
}

/// Append-only computation tape with reverse-mode differentiation.
///
/// Nodes are created in topological order, so the backward pass simply walks
/// the tape from the loss towards the leaves.
#[derive(Debug)]
pub struct Graph<T> {
    pub(crate) nodes: Vec<Node<T>>,
    params: Vec<(String, Var)>,
    param_index: HashMap<String, Var>,
    grad_enabled: bool,
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
            params: Vec::new(),
            param_index: HashMap::new(),
            grad_enabled: true,
        }
    }

    /// A graph that records no gradient information; parameters are loaded as constants.
    pub fn inference() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad: requires_grad && self.grad_enabled,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, false, Op::Leaf)
    }

    /// Loads a trainable parameter; repeated loads of one name share a node.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        if let Some(&v) = self.param_index.get(name) {
            return Ok(v);
        }
        let value = store.value(name)?.clone();
        let v = self.push(value, true, Op::Leaf);
        self.params.push((name.to_string(), v));
        self.param_index.insert(name.to_string(), v);
        Ok(v)
    }

    /// Loads a parameter as a constant (frozen networks, the other player in a GAN step).
    pub fn frozen(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        Ok(self.constant(store.value(name)?.clone()))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.data()[0]
    }

    /// Whether each ReLU input element is positive, in graph order. Two
    /// evaluations with equal patterns lie on the same linear piece of every ReLU.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(x) = node.op {
                out.extend(self.nodes[x.0].value.data().iter().map(|&v| v > T::zero()));
            }
        }
        out
    }

    /// Parameters loaded through [`Graph::param`], in load order.
    pub fn params(&self) -> impl Iterator<Item = (&str, Var)> {
        self.params.iter().map(|(n, v)| (n.as_str(), *v))
    }

    /// Reverse pass from a single-element `loss`.
    ///
    /// Afterwards every reachable node with `requires_grad` holds its gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be a scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if node.requires_grad && g.is_some() {
                node.grad = g;
            }
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Conv {
                input,
                kernel,
                bias,
                geom,
                cols,
            } => self.conv_backward(*input, *kernel, *bias, geom, cols.as_deref(), g, grads),
            Op::Deconv {
                input,
                kernel,
                bias,
                geom,
            } => self.deconv_backward(*input, *kernel, *bias, geom, g, grads),
            Op::Linear {
                input,
                weight,
                bias,
            } => self.linear_backward(*input, *weight, *bias, g, grads),
            Op::Relu(x) => {
                let y = &node.value;
                self.accumulate_with(grads, *x, |i| {
                    if y.data()[i] > T::zero() {
                        g.data()[i]
                    } else {
                        T::zero()
                    }
                });
            }
            Op::Tanh(x) => {
                let y = node.value.data();
                self.accumulate_with(grads, *x, |i| g.data()[i] * (T::one() - y[i] * y[i]));
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                self.accumulate_with(grads, *x, |i| g.data()[i] * y[i] * (T::one() - y[i]));
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g);
                self.accumulate(grads, *b, g);
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g);
                self.accumulate_with(grads, *b, |i| -g.data()[i]);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate_with(grads, *a, |i| g.data()[i] * bv[i]);
                self.accumulate_with(grads, *b, |i| g.data()[i] * av[i]);
            }
            Op::Scale(x, f) => self.accumulate_with(grads, *x, |i| g.data()[i] * *f),
            Op::Sum(x) => {
                let s = g.data()[0];
                self.accumulate_with(grads, *x, |_| s);
            }
            Op::Mean(x) => {
                let s = g.data()[0] / T::of(self.value(*x).len() as f64);
                self.accumulate_with(grads, *x, |_| s);
            }
            Op::Mse(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let s = g.data()[0] * T::of(2.0) / T::of(av.len() as f64);
                self.accumulate_with(grads, *a, |i| s * (av[i] - bv[i]));
                self.accumulate_with(grads, *b, |i| s * (bv[i] - av[i]));
            }
            Op::Bce { input, target, eps } => self.bce_backward(*input, *target, *eps, g, grads),
            Op::Concat { inputs, axis } => {
                let mut start = 0;
                for &x in inputs {
                    let len = self.shape(x)[*axis];
                    if self.nodes[x.0].requires_grad {
                        let part = g.slice_axis(*axis, start, len).expect("concat grad slice");
                        self.accumulate(grads, x, &part);
                    }
                    start += len;
                }
            }
            Op::Slice { input, axis, start } => {
                self.slice_backward(*input, *axis, *start, g, grads)
            }
            Op::Reshape(x) => {
                self.accumulate_with(grads, *x, |i| g.data()[i]);
            }
            Op::Resize { input, rows, cols } => self.resize_backward(*input, rows, cols, g, grads),
            Op::FramesToVolume {
                input,
                frames,
                channels,
            } => self.volume_backward(*input, *frames, *channels, g, grads),
        }
    }

    pub(crate) fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: &Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(g),
            slot @ None => {
                *slot = Some(Tensor::new(self.shape(v), g.data().to_vec()).expect("grad shape"));
            }
        }
    }

    pub(crate) fn accumulate_with(
        &self,
        grads: &mut [Option<Tensor<T>>],
        v: Var,
        f: impl Fn(usize) -> T,
    ) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (i, a) in acc.data_mut().iter_mut().enumerate() {
                    *a += f(i);
                }
            }
            slot @ None => *slot = Some(Tensor::from_fn(self.shape(v), f)),
        }
    }

    /// Mutable gradient buffer for `v`, created zero-filled when absent.
    pub(crate) fn grad_slot<'a>(
        &self,
        grads: &'a mut [Option<Tensor<T>>],
        v: Var,
    ) -> &'a mut Tensor<T> {
        grads[v.0].get_or_insert_with(|| Tensor::zeros(self.shape(v)))
    }
}
