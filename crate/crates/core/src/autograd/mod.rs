//! Reverse-mode automatic differentiation over an append-only tape.
//!
//! Every op appends a node holding its output value and whatever it needs for
//! the backward rule. Node ids are assigned in creation order, which is a
//! topological order of the DAG, so `backward` is a single reverse sweep.

mod activation;
mod ops;

use std::cell::RefCell;
use std::fmt;

pub use activation::Activation;

use crate::error::{Error, Result};
use crate::tensor::kernels::ConvGeometry;
use crate::tensor::{Element, Tensor};

type CustomBackward<E> = Box<dyn Fn(&Tensor<E>, &Tensor<E>) -> Tensor<E>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum BinaryKind {
    Add,
    Sub,
    Mul,
}

pub(crate) enum Op<E: Element> {
    Leaf,
    Binary { kind: BinaryKind, a: usize, b: usize },
    Conv { input: usize, weight: usize, bias: Option<usize>, geo: ConvGeometry },
    Gap { input: usize },
    BatchNorm { input: usize, gamma: usize, beta: usize, xhat: Vec<E>, inv_std: Vec<E>, batch_stats: bool },
    LayerNorm { input: usize, gamma: usize, beta: usize, xhat: Vec<E>, inv_std: Vec<E> },
    Activation { input: usize, kind: Activation },
    Linear { input: usize, weight: usize, bias: Option<usize> },
    Concat { a: usize, b: usize },
    Narrow { input: usize, start: usize },
    ChannelMax { input: usize, argmax: Vec<u32> },
    Reshape { input: usize },
    Sum { input: usize },
    Mean { input: usize },
    CrossEntropy { logits: usize, probs: Vec<E>, labels: Vec<usize> },
    Custom { input: usize, backward: CustomBackward<E> },
}

impl<E: Element> Op<E> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Binary { kind: BinaryKind::Add, .. } => "add",
            Op::Binary { kind: BinaryKind::Sub, .. } => "sub",
            Op::Binary { kind: BinaryKind::Mul, .. } => "mul",
            Op::Conv { .. } => "conv2d",
            Op::Gap { .. } => "gap",
            Op::BatchNorm { .. } => "batchnorm2d",
            Op::LayerNorm { .. } => "layernorm_channels",
            Op::Activation { .. } => "activation",
            Op::Linear { .. } => "linear",
            Op::Concat { .. } => "channel_concat",
            Op::Narrow { .. } => "channel_narrow",
            Op::ChannelMax { .. } => "channel_max",
            Op::Reshape { .. } => "reshape",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Custom { .. } => "custom",
        }
    }
}

pub(crate) struct Node<E: Element> {
    pub(crate) value: Tensor<E>,
    pub(crate) op: Op<E>,
    pub(crate) requires_grad: bool,
    grad: Option<Tensor<E>>,
}

/// Recording of one forward computation. Confined to a single thread.
pub struct Tape<E: Element> {
    nodes: RefCell<Vec<Node<E>>>,
}

impl<E: Element> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> fmt::Debug for Tape<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tape({} nodes)", self.len())
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, E: Element> {
    tape: &'t Tape<E>,
    id: usize,
}

impl<E: Element> fmt::Debug for Var<'_, E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<E: Element> Tape<E> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a leaf value.
    pub fn leaf(&self, value: Tensor<E>, requires_grad: bool) -> Var<'_, E> {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Leaf that does not participate in differentiation.
    pub fn constant(&self, value: Tensor<E>) -> Var<'_, E> {
        self.leaf(value, false)
    }

    pub(crate) fn push(&self, value: Tensor<E>, op: Op<E>, requires_grad: bool) -> Var<'_, E> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, requires_grad, grad: None });
        Var { tape: self, id: nodes.len() - 1 }
    }

    pub(crate) fn value(&self, id: usize) -> Tensor<E> {
        self.nodes.borrow()[id].value.clone()
    }

    pub(crate) fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Accumulated gradient of a leaf, if backward reached it.
    pub fn grad(&self, var: Var<'_, E>) -> Option<Tensor<E>> {
        self.nodes.borrow()[var.id].grad.clone()
    }

    /// Clears every leaf accumulator.
    pub fn zero_grad(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.grad = None;
        }
    }

    /// Backpropagates from a one-element `loss`, adding into the gradient
    /// accumulator of every leaf that requires grad.
    pub fn backward(&self, loss: Var<'_, E>) -> Result<()> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(Error::Contract(format!("backward needs a scalar loss, got shape {:?}", root.value.shape())));
        }
        if !root.requires_grad {
            return Err(Error::Contract("loss does not depend on any requires_grad leaf".into()));
        }
        let mut grads: Vec<Option<Tensor<E>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(Tensor::full(root.value.shape().to_vec(), E::one()));
        let mut leaf_grads = Vec::new();
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                leaf_grads.push((id, g));
                continue;
            }
            for (input, dg) in ops::backward_rule(&nodes, node, &g)? {
                if !nodes[input].requires_grad {
                    continue;
                }
                debug_assert_eq!(dg.shape(), nodes[input].value.shape(), "grad shape for {}", node.op.name());
                grads[input] = Some(match grads[input].take() {
                    Some(acc) => acc.zip_map(&dg, |a, b| a + b)?,
                    None => dg,
                });
            }
        }
        drop(nodes);
        let mut nodes = self.nodes.borrow_mut();
        for (id, g) in leaf_grads {
            let node = &mut nodes[id];
            node.grad = Some(match node.grad.take() {
                Some(acc) => acc.zip_map(&g, |a, b| a + b)?,
                None => g,
            });
        }
        Ok(())
    }
}

impl<'t, E: Element> Var<'t, E> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<E> {
        self.tape
    }

    pub fn value(&self) -> Tensor<E> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    pub fn grad(&self) -> Option<Tensor<E>> {
        self.tape.grad(*self)
    }

    pub(crate) fn same_tape(&self, other: &Var<'_, E>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::Contract("variables recorded on different tapes".into()))
        }
    }
}
