//! Reverse-mode automatic differentiation with differentiable backward passes.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s together with
//! the computed value. [`Graph::grad`] walks the record in reverse and builds
//! the gradient out of the same primitive operations, appending them to the
//! graph. With `create_graph = true` those new nodes are themselves recorded,
//! so a gradient can be differentiated again (gradient of a gradient, as the
//! single-step latent encoder requires). With `create_graph = false` the
//! backward ops are evaluated without recording and the results are detached.
//!
//! A graph is single-threaded (`RefCell` inside); build one per step.

mod backward;
pub mod check;
mod ops;

pub use backward::Gradients;

use alloc::rc::Rc;
use alloc::vec::Vec;
use core::cell::{Cell, RefCell};
use core::fmt;

use crate::scalar::Float;
use crate::tensor::{Conv2dGeometry, Tensor};

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize),
    Powf(usize, f64),
    Exp(usize),
    Log(usize),
    Sin(usize),
    Cos(usize),
    Sqrt(usize),
    Tanh(usize),
    Sigmoid(usize),
    Softplus(usize),
    Relu(usize),
    Elu(usize),
    MatMul(usize, usize),
    Transpose(usize),
    Reshape(usize),
    SumTo(usize),
    BroadcastTo(usize),
    Concat(Vec<usize>, usize),
    Slice { x: usize, axis: usize, start: usize },
    Pad { x: usize, axis: usize, before: usize },
    Conv2d { x: usize, w: usize, geom: Conv2dGeometry },
    Conv2dTranspose { y: usize, w: usize, geom: Conv2dGeometry },
    Conv2dWeight { x: usize, y: usize, geom: Conv2dGeometry },
    Upsample(usize, usize),
    SumPool(usize, usize),
}

impl Op {
    pub(crate) fn for_each_parent(&self, mut f: impl FnMut(usize)) {
        use Op::*;
        match *self {
            Leaf => {}
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | MatMul(a, b) => {
                f(a);
                f(b);
            }
            Neg(a)
            | Scale(a, _)
            | AddScalar(a)
            | Powf(a, _)
            | Exp(a)
            | Log(a)
            | Sin(a)
            | Cos(a)
            | Sqrt(a)
            | Tanh(a)
            | Sigmoid(a)
            | Softplus(a)
            | Relu(a)
            | Elu(a)
            | Transpose(a)
            | Reshape(a)
            | SumTo(a)
            | BroadcastTo(a)
            | Upsample(a, _)
            | SumPool(a, _) => f(a),
            Concat(ref parts, _) => parts.iter().copied().for_each(f),
            Slice { x, .. } | Pad { x, .. } => f(x),
            Conv2d { x, w, .. } => {
                f(x);
                f(w);
            }
            Conv2dTranspose { y, w, .. } => {
                f(y);
                f(w);
            }
            Conv2dWeight { x, y, .. } => {
                f(x);
                f(y);
            }
        }
    }
}

struct Node<T> {
    op: Op,
    value: Rc<Tensor<T>>,
}

pub struct Graph<T: Float> {
    nodes: RefCell<Vec<Node<T>>>,
    recording: Cell<bool>,
}

impl<T: Float> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> fmt::Debug for Graph<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph").field("nodes", &self.len()).finish()
    }
}

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            recording: Cell::new(true),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Adds a leaf holding `value`. Gradients can be taken with respect to
    /// any leaf; leaves that are never passed to [`Graph::grad`] act as
    /// constants.
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_leaf(Rc::new(value))
    }

    pub fn scalar(&self, v: T) -> Var<'_, T> {
        self.leaf(Tensor::scalar(v))
    }

    pub(crate) fn push_leaf(&self, value: Rc<Tensor<T>>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op: Op::Leaf, value });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    pub(crate) fn push(&self, op: Op, value: Tensor<T>) -> Var<'_, T> {
        let op = if self.recording.get() { op } else { Op::Leaf };
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, value: Rc::new(value) });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    pub(crate) fn var(&self, id: usize) -> Var<'_, T> {
        Var { graph: self, id }
    }

    pub(crate) fn op(&self, id: usize) -> Op {
        self.nodes.borrow()[id].op.clone()
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<Tensor<T>> {
        self.nodes.borrow()[id].value.clone()
    }

    pub fn is_recording(&self) -> bool {
        self.recording.get()
    }

    /// Runs `f` with recording switched off: values are computed but no
    /// parent links are kept, so nothing built inside is differentiable.
    pub fn no_grad<R>(&self, f: impl FnOnce() -> R) -> R {
        let prev = self.recording.replace(false);
        let out = f();
        self.recording.set(prev);
        out
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, T: Float> {
    graph: &'g Graph<T>,
    id: usize,
}

impl<T: Float> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var").field("id", &self.id).field("shape", &self.shape()).finish()
    }
}

impl<'g, T: Float> Var<'g, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.graph.value_of(self.id)
    }

    /// Owned copy of the value.
    pub fn tensor(&self) -> Tensor<T> {
        (*self.value()).clone()
    }

    pub fn shape(&self) -> alloc::vec::Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.graph.nodes.borrow()[self.id].value.numel()
    }

    /// New leaf sharing this value; gradients do not flow through it.
    pub fn detach(&self) -> Var<'g, T> {
        self.graph.push_leaf(self.value())
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.graph.nodes.borrow()[self.id].op, Op::Leaf)
    }
}
