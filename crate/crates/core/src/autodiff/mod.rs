//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] is an arena of nodes. Every operation appends a node whose
//! value is computed eagerly, so creation order is a topological order and
//! [`Graph::backward`] is a single reverse sweep. Nodes are addressed by
//! copyable [`NodeId`] handles that are only meaningful for the graph that
//! issued them.
//!
//! ```
//! use calseg::autodiff::Graph;
//! use calseg::Tensor;
//!
//! let mut g = Graph::new();
//! let x = g.variable(Tensor::from_vec(vec![3.0]));
//! let sq = g.mul(x, x).unwrap();
//! let root = g.sum(sq);
//! g.backward(root).unwrap();
//! assert_eq!(g.grad(x).data(), &[6.0]);
//! ```

mod check;
mod nn;
mod ops;

pub use check::{grad_check, numeric_gradient};
pub use ops::{BinaryOp, LOG_CEIL, LOG_FLOOR, POW_FLOOR};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation tag of a node, without its operands.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Affine,
    Pow,
    Exp,
    Log,
    Relu,
    Sum,
    Mean,
    Channel,
    Softmax,
    Conv2d,
    InstanceNorm,
    Downsample2,
    Upsample2,
    Concat,
}

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    Binary {
        kind: BinaryOp,
        a: NodeId,
        b: NodeId,
    },
    /// `scale * x + shift`; the shift only matters going forward.
    Affine {
        input: NodeId,
        scale: f64,
    },
    Pow {
        input: NodeId,
        exponent: f64,
    },
    Exp(NodeId),
    Log(NodeId),
    Relu(NodeId),
    Reduce {
        input: NodeId,
        /// Output flat index of every input element.
        index_map: Vec<usize>,
        /// 1 for a sum, 1/count for a mean.
        weight: f64,
        mean: bool,
    },
    Channel {
        input: NodeId,
        index: usize,
    },
    Softmax(NodeId),
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
    },
    InstanceNorm {
        input: NodeId,
        gain: NodeId,
        bias: NodeId,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Downsample2(NodeId),
    Upsample2(NodeId),
    Concat(NodeId, NodeId),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Binary { kind, .. } => match kind {
                BinaryOp::Add => OpKind::Add,
                BinaryOp::Sub => OpKind::Sub,
                BinaryOp::Mul => OpKind::Mul,
                BinaryOp::Div => OpKind::Div,
            },
            Op::Affine { .. } => OpKind::Affine,
            Op::Pow { .. } => OpKind::Pow,
            Op::Exp(_) => OpKind::Exp,
            Op::Log(_) => OpKind::Log,
            Op::Relu(_) => OpKind::Relu,
            Op::Reduce { mean: false, .. } => OpKind::Sum,
            Op::Reduce { mean: true, .. } => OpKind::Mean,
            Op::Channel { .. } => OpKind::Channel,
            Op::Softmax(_) => OpKind::Softmax,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::InstanceNorm { .. } => OpKind::InstanceNorm,
            Op::Downsample2(_) => OpKind::Downsample2,
            Op::Upsample2(_) => OpKind::Upsample2,
            Op::Concat(..) => OpKind::Concat,
        }
    }

    fn parents(&self) -> Vec<NodeId> {
        match *self {
            Op::Leaf => vec![],
            Op::Binary { a, b, .. } => vec![a, b],
            Op::Affine { input, .. }
            | Op::Pow { input, .. }
            | Op::Reduce { input, .. }
            | Op::Channel { input, .. } => vec![input],
            Op::Exp(x)
            | Op::Log(x)
            | Op::Relu(x)
            | Op::Softmax(x)
            | Op::Downsample2(x)
            | Op::Upsample2(x) => vec![x],
            Op::Conv2d {
                input,
                kernel,
                bias,
            } => vec![input, kernel, bias],
            Op::InstanceNorm {
                input, gain, bias, ..
            } => vec![input, gain, bias],
            Op::Concat(a, b) => vec![a, b],
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    grad: Option<Tensor>,
    requires_grad: bool,
}

/// An append-only computation graph.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A leaf that receives gradients.
    pub fn variable(&mut self, value: Tensor) -> NodeId {
        self.push_node(Op::Leaf, value, true)
    }

    /// A leaf treated as a constant by [`Graph::backward`].
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_node(Op::Leaf, value, false)
    }

    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.constant(Tensor::scalar(value))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Accumulated gradient of `id`; zeros if nothing has flowed into it.
    pub fn grad(&self, id: NodeId) -> Tensor {
        let node = &self.nodes[id.0];
        node.grad
            .clone()
            .unwrap_or_else(|| Tensor::zeros(node.value.shape()))
    }

    pub fn op_kind(&self, id: NodeId) -> OpKind {
        self.nodes[id.0].op.kind()
    }

    pub fn parents(&self, id: NodeId) -> Vec<NodeId> {
        self.nodes[id.0].op.parents()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Clears every accumulated gradient.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub(crate) fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        let requires_grad = op.parents().iter().any(|p| self.requires_grad(*p));
        self.push_node(op, value, requires_grad)
    }

    fn push_node(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        debug_assert!(op.parents().iter().all(|p| p.0 < self.nodes.len()));
        self.nodes.push(Node {
            op,
            value,
            grad: None,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Propagates d(root)/d(node) into every node reachable from `root`.
    ///
    /// Gradients are added to whatever is already stored, so calling this
    /// twice without [`Graph::zero_grad`] doubles them.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        let root_value = &self.nodes[root.0].value;
        if root_value.numel() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar root, got shape {:?}",
                root_value.shape()
            )));
        }

        let mut pass: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        pass[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let Some(gout) = pass[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if node.requires_grad {
                for (parent, contribution) in self.local_gradients(i, &gout) {
                    if !self.nodes[parent.0].requires_grad {
                        continue;
                    }
                    match &mut pass[parent.0] {
                        Some(acc) => acc
                            .iter_mut()
                            .zip(&contribution)
                            .for_each(|(a, c)| *a += c),
                        slot @ None => *slot = Some(contribution),
                    }
                }
            }
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => acc
                    .data_mut()
                    .iter_mut()
                    .zip(&gout)
                    .for_each(|(a, g)| *a += g),
                slot @ None => {
                    *slot = Some(Tensor::new(node.value.shape().to_vec(), gout)?);
                }
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `i` for each of its parents.
    fn local_gradients(&self, i: usize, gout: &[f64]) -> Vec<(NodeId, Vec<f64>)> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => vec![],
            Op::Binary { kind, a, b } => ops::binary_backward(self, *kind, *a, *b, gout),
            Op::Affine { input, scale } => {
                vec![(*input, gout.iter().map(|g| g * scale).collect())]
            }
            Op::Pow { input, exponent } => {
                vec![(*input, ops::pow_backward(self.value(*input), *exponent, gout))]
            }
            Op::Exp(x) => vec![(
                *x,
                gout.iter().zip(node.value.data()).map(|(g, y)| g * y).collect(),
            )],
            Op::Log(x) => vec![(*x, ops::log_backward(self.value(*x), gout))],
            Op::Relu(x) => vec![(
                *x,
                gout.iter()
                    .zip(self.value(*x).data())
                    .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                    .collect(),
            )],
            Op::Reduce {
                input,
                index_map,
                weight,
                ..
            } => vec![(
                *input,
                index_map.iter().map(|&o| gout[o] * weight).collect(),
            )],
            Op::Channel { input, index } => {
                let mut g = vec![0.0; self.value(*input).numel()];
                let stride = gout.len();
                g[index * stride..(index + 1) * stride].copy_from_slice(gout);
                vec![(*input, g)]
            }
            Op::Softmax(x) => vec![(*x, ops::softmax_backward(&node.value, gout))],
            Op::Conv2d {
                input,
                kernel,
                bias,
            } => nn::conv2d_backward(self, *input, *kernel, *bias, gout),
            Op::InstanceNorm {
                input,
                gain,
                bias,
                normalized,
                inv_std,
            } => nn::instance_norm_backward(self, *input, *gain, *bias, normalized, inv_std, gout),
            Op::Downsample2(x) => vec![(*x, nn::downsample2_backward(self.value(*x), gout))],
            Op::Upsample2(x) => vec![(*x, nn::upsample2_backward(self.value(*x), gout))],
            Op::Concat(a, b) => {
                let split = self.value(*a).numel();
                vec![(*a, gout[..split].to_vec()), (*b, gout[split..].to_vec())]
            }
        }
    }
}
