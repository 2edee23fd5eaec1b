//! Reverse-mode tape.
//!
//! Nodes are appended in execution order, so every node's inputs precede
//! it and a single reverse sweep over the node list is a valid reverse
//! topological traversal.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Inputs handed to a backward closure.
pub struct BackwardCtx<'a, T: Scalar> {
    pub grad: &'a Tensor<T>,
    pub inputs: Vec<&'a Tensor<T>>,
    pub output: &'a Tensor<T>,
    /// `needs[i]` is false when input `i` does not require a gradient.
    pub needs: Vec<bool>,
}

pub trait Backward<T: Scalar> {
    /// One entry per input, `None` where no gradient flows.
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>>;
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    requires_grad: bool,
    inputs: Vec<usize>,
    op: Option<Box<dyn Backward<T>>>,
}

/// Computation graph holding every intermediate value of one forward pass.
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; no gradient is computed for it.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            inputs: Vec::new(),
            op: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Record an op result. The backward closure is dropped when no input
    /// needs a gradient, which makes inference passes allocation-light.
    pub fn push<B: Backward<T> + 'static>(&mut self, value: Tensor<T>, inputs: &[Var], op: B) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            inputs: inputs.iter().map(|v| v.0).collect(),
            op: if requires_grad { Some(Box::new(op)) } else { None },
        });
        Var(self.nodes.len() - 1)
    }

    /// Backpropagate from a scalar output.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let value = self.value(loss);
        if value.len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                value.shape()
            )));
        }
        let seed = Tensor::full(value.shape(), T::one());
        self.backward_with(loss, seed)
    }

    /// Backpropagate an explicit output cotangent.
    pub fn backward_with(&self, out: Var, seed: Tensor<T>) -> Result<Gradients<T>> {
        if seed.shape() != self.value(out).shape() {
            return Err(Error::shape(format!(
                "seed gradient shape {:?} does not match output {:?}",
                seed.shape(),
                self.value(out).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(seed);
        for idx in (0..=out.0).rev() {
            let node = &self.nodes[idx];
            let Some(op) = node.op.as_ref() else {
                continue;
            };
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            let ctx = BackwardCtx {
                grad: &grad,
                inputs: node.inputs.iter().map(|&i| &self.nodes[i].value).collect(),
                output: &node.value,
                needs: node
                    .inputs
                    .iter()
                    .map(|&i| self.nodes[i].requires_grad)
                    .collect(),
            };
            let input_grads = op.backward(&ctx);
            debug_assert_eq!(input_grads.len(), node.inputs.len());
            for (&src, g) in node.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[src].requires_grad {
                    continue;
                }
                match grads[src].as_mut() {
                    Some(acc) => acc.add_assign(&g),
                    None => grads[src] = Some(g),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradients of every leaf reached by a backward pass.
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}
