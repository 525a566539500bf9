//! Reverse-mode automatic differentiation over an append-only tape.
//!
//! Every forward op appends a node holding its output value and a backward
//! rule. Nodes are stored in creation order, so the tape is topologically
//! sorted by construction and `backward` is a single reverse sweep.

mod ops;

use std::fmt::Debug;

pub(crate) use ops::sigmoid;
pub use ops::{gram_kernel, Shift};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of a recorded operation.
///
/// `needs[i]` says whether input `i` participates in a gradient; rules may
/// return `None` for inputs that do not.
pub trait Backward<T: Real>: Debug {
    fn name(&self) -> &'static str;

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad_out: &[T],
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>>;
}

#[derive(Debug)]
struct Node<T: Real> {
    value: Tensor<T>,
    inputs: Vec<Var>,
    rule: Option<Box<dyn Backward<T>>>,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable input. Its gradient is kept after `backward`.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push_node(value, Vec::new(), None, true)
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_node(value, Vec::new(), None, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn zero_grad(&mut self) {
        self.nodes.iter_mut().for_each(|n| n.value.zero_grad());
    }

    /// Records an op. Non-finite outputs are rejected.
    pub fn record(&mut self, value: Tensor<T>, inputs: Vec<Var>, rule: Box<dyn Backward<T>>) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: rule.name() });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_node(value, inputs, Some(rule), requires_grad))
    }

    fn push_node(
        &mut self,
        value: Tensor<T>,
        inputs: Vec<Var>,
        rule: Option<Box<dyn Backward<T>>>,
        requires_grad: bool,
    ) -> Var {
        self.nodes.push(Node {
            value,
            inputs,
            rule,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Propagates d(output)/d(leaf) into every leaf's gradient buffer.
    ///
    /// Gradients add onto whatever the leaves already hold, so calling this
    /// twice without [`Tape::zero_grad`] doubles them.
    pub fn backward(&mut self, output: Var) -> Result<()> {
        let out_shape = self.nodes[output.0].value.shape();
        if self.nodes[output.0].value.numel() != 1 {
            return Err(Error::NotScalar(out_shape.to_vec()));
        }
        let mut pending: Vec<Option<Vec<T>>> = vec![None; output.0 + 1];
        pending[output.0] = Some(vec![T::ONE]);

        for idx in (0..=output.0).rev() {
            let Some(grad) = pending[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(rule) = &node.rule else {
                self.nodes[idx].value.accumulate_grad(&grad);
                continue;
            };
            let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let needs: Vec<bool> = node.inputs.iter().map(|v| self.nodes[v.0].requires_grad).collect();
            let input_grads = rule.backward(&inputs, &node.value, &grad, &needs);
            debug_assert_eq!(input_grads.len(), node.inputs.len());
            for ((&var, g), need) in node.inputs.iter().zip(input_grads).zip(needs) {
                let (true, Some(g)) = (need, g) else { continue };
                debug_assert_eq!(g.len(), self.nodes[var.0].value.numel(), "{}", rule.name());
                match &mut pending[var.0] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }
}
