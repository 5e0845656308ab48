//! Reverse-mode automatic differentiation over a dynamic tape.
//!
//! A [`Tape`] is rebuilt for every forward pass. Each op appends one node
//! holding its output value; [`Tape::backward`] walks the nodes in reverse and
//! applies each op's vector-Jacobian product. Nodes that do not depend on any
//! `requires_grad` leaf are never visited.

pub(crate) mod kernels;
mod ops;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use ops::Activation;
pub(crate) use ops::{softmax_channels_forward, Op};

/// Handle to a node on a [`Tape`]. Only meaningful for the tape that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) struct Node<S> {
    pub shape: Vec<usize>,
    pub value: Vec<S>,
    pub op: Op,
    pub requires_grad: bool,
}

/// Ordered record of executed operations.
pub struct Tape<S> {
    pub(crate) nodes: Vec<Node<S>>,
    grads: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record a leaf. Gradients are tracked for it when `requires_grad` is set.
    pub fn leaf(&mut self, tensor: Tensor<S>, requires_grad: bool) -> Var {
        let shape = tensor.shape().to_vec();
        self.push_raw(shape, tensor.into_data(), Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, tensor: Tensor<S>) -> Var {
        self.leaf(tensor, false)
    }

    pub fn param(&mut self, tensor: Tensor<S>) -> Var {
        self.leaf(tensor, true)
    }

    pub(crate) fn push_raw(
        &mut self,
        shape: Vec<usize>,
        value: Vec<S>,
        op: Op,
        requires_grad: bool,
    ) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Append a non-leaf node; it tracks gradients iff any input does.
    pub(crate) fn push_op(&mut self, shape: Vec<usize>, value: Vec<S>, op: Op) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_raw(shape, value, op, requires_grad)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[S] {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn tensor(&self, v: Var) -> Tensor<S> {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("tape node holds a consistent tensor")
    }

    /// Scalar value of a single-element node.
    pub fn item(&self, v: Var) -> S {
        let n = &self.nodes[v.0];
        assert_eq!(n.value.len(), 1, "item() on non-scalar node {:?}", n.shape);
        n.value[0]
    }

    /// Accumulated gradient of `v`, or `None` if no backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.grads[v.0].as_deref()
    }

    /// Gradient as a tensor, zeros if nothing has been accumulated.
    pub fn grad_tensor(&self, v: Var) -> Tensor<S> {
        let shape = self.nodes[v.0].shape.clone();
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("grad matches node shape"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    /// Propagate d(loss)/d(node) to every `requires_grad` ancestor of `loss`,
    /// adding into the gradients left by earlier calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let loss_node = &self.nodes[loss.0];
        if loss_node.value.len() != 1 {
            return Err(Error::NonScalarLoss(loss_node.shape.clone()));
        }
        if !loss_node.requires_grad {
            return Ok(());
        }
        let mut local: Vec<Option<Vec<S>>> = vec![None; loss.0 + 1];
        local[loss.0] = Some(vec![S::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = local[i].take() else {
                continue;
            };
            debug_assert!(self.nodes[i].requires_grad);
            for (input, contribution) in ops::backward_node(&self.nodes, i, &g) {
                debug_assert!(self.nodes[input.0].requires_grad);
                accumulate(&mut local[input.0], contribution);
            }
            accumulate(&mut self.grads[i], g);
        }
        Ok(())
    }
}

fn accumulate<S: Scalar>(slot: &mut Option<Vec<S>>, g: Vec<S>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
        None => *slot = Some(g),
    }
}
