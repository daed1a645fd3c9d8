use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::ops::Op;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node of one specific [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    pub(crate) id: usize,
    pub(crate) graph: u64,
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) needs_grad: bool,
}

/// Recording tape. One graph per forward pass; not shared across threads.
pub struct Graph<T> {
    pub(crate) id: u64,
    pub(crate) nodes: Vec<Node<T>>,
    backward_done: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Inserts a leaf; it receives a gradient iff `t.requires_grad`.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let needs_grad = t.requires_grad;
        self.push_unchecked(t, Op::Leaf, needs_grad)
    }

    /// Inserts a leaf that always receives a gradient.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t.with_grad())
    }

    /// Inserts a leaf that never receives a gradient.
    pub fn constant(&mut self, mut t: Tensor<T>) -> Var {
        t.requires_grad = false;
        self.leaf(t)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.id].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.id].value.shape()
    }

    pub(crate) fn check(&self, v: Var) -> Result<()> {
        if v.graph != self.id || v.id >= self.nodes.len() {
            return Err(Error::Graph("variable belongs to a different graph".into()));
        }
        Ok(())
    }

    fn push_unchecked(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node { value, op, needs_grad });
        Var { id, graph: self.id }
    }

    /// Appends an op result, rejecting non-finite values.
    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, name: &str) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(format!("output of {name}")));
        }
        let needs_grad = op.parents().iter().any(|p| self.nodes[p.id].needs_grad);
        Ok(self.push_unchecked(value, op, needs_grad))
    }

    /// Reverse sweep from a scalar `loss`. Returns the gradient of every
    /// leaf created with `requires_grad`. A graph can be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        self.check(loss)?;
        if self.backward_done {
            return Err(Error::Graph("backward already called on this graph".into()));
        }
        if self.nodes[loss.id].value.len() != 1 {
            return Err(Error::Graph(format!(
                "loss must be scalar, got shape {:?}",
                self.nodes[loss.id].value.shape()
            )));
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(vec![T::one()]);
        for id in (0..=loss.id).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            node.op.backward(&self.nodes, &node.value, &g, &mut grads);
        }

        let mut out = HashMap::new();
        for (id, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.value.requires_grad {
                let data = grads
                    .get_mut(id)
                    .and_then(Option::take)
                    .unwrap_or_else(|| vec![T::zero(); node.value.len()]);
                let t = Tensor::new(node.value.shape(), data)?;
                if !t.all_finite() {
                    return Err(Error::NonFinite(format!("gradient of leaf {id}")));
                }
                out.insert(id, t);
            }
        }
        Ok(Gradients { graph: self.id, grads: out })
    }
}

/// Gradients of a loss with respect to the graph's trainable leaves.
pub struct Gradients<T> {
    graph: u64,
    grads: HashMap<usize, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        if v.graph != self.graph {
            return None;
        }
        self.grads.get(&v.id)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        if v.graph != self.graph {
            return None;
        }
        self.grads.remove(&v.id)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}
