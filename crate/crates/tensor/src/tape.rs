//! Tape-based reverse-mode differentiation.
//!
//! Every operation on a [`Var`] appends a node to the shared [`Tape`]. Nodes
//! are only ever appended after their inputs, so walking the node list
//! backwards from the output visits each node once in reverse topological
//! order.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tensor::Tensor;

/// Receives the output gradient and a mask of which parents need gradients,
/// and returns one optional gradient per parent.
pub type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    parents: Vec<usize>,
    requires_grad: bool,
    backward: Option<BackwardFn<T>>,
}

struct Inner<T> {
    nodes: Vec<Node<T>>,
}

#[derive(Clone)]
pub struct Tape<T>(Rc<RefCell<Inner<T>>>);

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape(Rc::new(RefCell::new(Inner { nodes: Vec::new() })))
    }

    pub fn len(&self) -> usize {
        self.0.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node<T>) -> usize {
        let mut inner = self.0.borrow_mut();
        inner.nodes.push(node);
        inner.nodes.len() - 1
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<T> {
        let id = self.push(Node {
            parents: vec![],
            requires_grad: false,
            backward: None,
        });
        Var {
            tape: self.clone(),
            id,
            value: Rc::new(value),
            requires_grad: false,
        }
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Tensor<T>) -> Var<T> {
        let id = self.push(Node {
            parents: vec![],
            requires_grad: true,
            backward: None,
        });
        Var {
            tape: self.clone(),
            id,
            value: Rc::new(value),
            requires_grad: true,
        }
    }

    pub(crate) fn record(
        &self,
        value: Tensor<T>,
        parents: &[&Var<T>],
        backward: impl Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>> + 'static,
    ) -> Var<T> {
        let requires_grad = parents.iter().any(|p| p.requires_grad);
        let id = self.push(Node {
            parents: parents.iter().map(|p| p.id).collect(),
            requires_grad,
            backward: if requires_grad {
                Some(Box::new(backward))
            } else {
                None
            },
        });
        Var {
            tape: self.clone(),
            id,
            value: Rc::new(value),
            requires_grad,
        }
    }

    pub fn same(&self, other: &Tape<T>) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }
}

/// A tensor value recorded on a tape.
#[derive(Clone)]
pub struct Var<T> {
    tape: Tape<T>,
    id: usize,
    value: Rc<Tensor<T>>,
    requires_grad: bool,
}

impl<T: Real> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.value.shape())
            .field("requires_grad", &self.requires_grad)
            .finish()
    }
}

impl<T: Real> Var<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn value_rc(&self) -> Rc<Tensor<T>> {
        self.value.clone()
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn tape(&self) -> &Tape<T> {
        &self.tape
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var<T> {
        self.tape.constant((*self.value).clone())
    }

    pub(crate) fn check_tape(&self, other: &Var<T>) -> Result<()> {
        if self.tape.same(&other.tape) {
            Ok(())
        } else {
            Err(TensorError::Config(
                "variables belong to different tapes".into(),
            ))
        }
    }

    /// Backpropagates from a scalar output.
    pub fn backward(&self) -> Result<Gradients<T>> {
        if self.value.numel() != 1 {
            return Err(TensorError::Shape {
                op: "backward",
                lhs: self.shape().to_vec(),
                rhs: vec![],
            });
        }
        self.backward_with(Tensor::ones(self.shape()))
    }

    /// Backpropagates an explicit output gradient.
    pub fn backward_with(&self, seed: Tensor<T>) -> Result<Gradients<T>> {
        if seed.shape() != self.shape() {
            return Err(crate::error::shape_err(
                "backward",
                seed.shape(),
                self.shape(),
            ));
        }
        let inner = self.tape.0.borrow();
        let n = self.id + 1;
        let mut grads: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        if self.requires_grad {
            grads[self.id] = Some(seed);
        }
        let mut visited = 0usize;
        for id in (0..n).rev() {
            let node = &inner.nodes[id];
            let Some(bw) = &node.backward else { continue };
            let Some(g) = grads[id].take() else { continue };
            visited += 1;
            let mask: Vec<bool> = node
                .parents
                .iter()
                .map(|&p| inner.nodes[p].requires_grad)
                .collect();
            let parent_grads = bw(&g, &mask);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((&p, &need), pg) in node.parents.iter().zip(&mask).zip(parent_grads) {
                if !need {
                    continue;
                }
                if let Some(pg) = pg {
                    match &mut grads[p] {
                        Some(acc) => acc.add_assign(&pg),
                        slot => *slot = Some(pg),
                    }
                }
            }
        }
        Ok(Gradients { grads, visited })
    }
}

/// Gradients of leaf variables after a backward pass.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    visited: usize,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: &Var<T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    pub fn get_id(&self, id: usize) -> Option<&Tensor<T>> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }

    /// Gradient of `var`, or zeros when nothing flowed into it.
    pub fn get_or_zeros(&self, var: &Var<T>) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.shape()))
    }

    /// Number of interior nodes whose backward function ran.
    pub fn visited(&self) -> usize {
        self.visited
    }
}
