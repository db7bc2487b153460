//! Reverse-mode tensor core.
//!
//! A [`Tensor`] is a node in a dynamically built compute graph over dense
//! `f64` matrices. Ops record their parents and a closure that routes the
//! output gradient to them; [`Tensor::backward`] walks the graph once in
//! reverse topological order, so shared subexpressions are handled exactly.

use crate::error::{Error, Result};
use ndarray::Array2;
use std::cell::{Cell, RefCell};
use std::collections::HashSet;
use std::rc::Rc;

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn fresh_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

pub(crate) type BackwardFn = Box<dyn Fn(&Array2<f64>)>;

struct Node {
    id: u64,
    values: RefCell<Array2<f64>>,
    grad: RefCell<Option<Array2<f64>>>,
    requires_grad: bool,
    parents: Vec<Tensor>,
    backward_fn: Option<BackwardFn>,
    backward_done: Cell<bool>,
}

/// Shared handle to a compute-graph node.
#[derive(Clone)]
pub struct Tensor {
    node: Rc<Node>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.node.requires_grad)
            .finish()
    }
}

impl Tensor {
    /// A leaf that does not participate in gradient flow.
    pub fn constant(values: Array2<f64>) -> Self {
        Self::leaf(values, false)
    }

    /// A trainable leaf: gradients accumulate here.
    pub fn parameter(values: Array2<f64>) -> Self {
        Self::leaf(values, true)
    }

    fn leaf(values: Array2<f64>, requires_grad: bool) -> Self {
        Tensor {
            node: Rc::new(Node {
                id: fresh_id(),
                values: RefCell::new(values),
                grad: RefCell::new(None),
                requires_grad,
                parents: Vec::new(),
                backward_fn: None,
                backward_done: Cell::new(false),
            }),
        }
    }

    /// Op output. Degrades to a constant when no parent needs gradients.
    pub(crate) fn from_op(
        values: Array2<f64>,
        parents: Vec<Tensor>,
        backward_fn: BackwardFn,
    ) -> Self {
        debug_assert!(
            values.iter().all(|x| x.is_finite()),
            "non-finite values produced by a forward op"
        );
        if parents.iter().any(|p| p.node.requires_grad) {
            Tensor {
                node: Rc::new(Node {
                    id: fresh_id(),
                    values: RefCell::new(values),
                    grad: RefCell::new(None),
                    requires_grad: true,
                    parents,
                    backward_fn: Some(backward_fn),
                    backward_done: Cell::new(false),
                }),
            }
        } else {
            Self::leaf(values, false)
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.node.values.borrow().dim()
    }

    pub fn nrows(&self) -> usize {
        self.shape().0
    }

    pub fn ncols(&self) -> usize {
        self.shape().1
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    /// Borrow of the current values.
    pub fn values(&self) -> std::cell::Ref<'_, Array2<f64>> {
        self.node.values.borrow()
    }

    /// Owned copy of the current values.
    pub fn to_array(&self) -> Array2<f64> {
        self.node.values.borrow().clone()
    }

    /// Scalar content of a 1x1 tensor.
    pub fn scalar(&self) -> f64 {
        let v = self.node.values.borrow();
        assert_eq!(v.dim(), (1, 1), "scalar() on a non-scalar tensor");
        v[[0, 0]]
    }

    /// Mutable borrow of the values; used by the optimizer and by finite
    /// difference probes. The compute graph must be rebuilt afterwards.
    pub fn values_mut(&self) -> std::cell::RefMut<'_, Array2<f64>> {
        self.node.values.borrow_mut()
    }

    /// Copy of the accumulated gradient, if any.
    pub fn grad(&self) -> Option<Array2<f64>> {
        self.node.grad.borrow().clone()
    }

    pub fn clear_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    pub(crate) fn accumulate_grad(&self, delta: &Array2<f64>) {
        if !self.node.requires_grad {
            return;
        }
        let mut slot = self.node.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => *g += delta,
            None => *slot = Some(delta.clone()),
        }
    }

    /// Reverse-mode accumulation from a scalar loss into every reachable
    /// tensor with `requires_grad`.
    ///
    /// Calling it again on the same loss without rebuilding the forward
    /// pass is a usage error.
    pub fn backward(&self) -> Result<()> {
        if self.shape() != (1, 1) {
            return Err(Error::Usage(format!(
                "backward requires a 1x1 loss tensor, got {:?}",
                self.shape()
            )));
        }
        if self.node.backward_done.replace(true) {
            return Err(Error::Usage(
                "backward called twice on the same loss; rebuild the forward pass first".into(),
            ));
        }
        let order = self.topological_order();
        self.accumulate_grad(&Array2::ones((1, 1)));
        for tensor in order.iter().rev() {
            if let Some(f) = &tensor.node.backward_fn {
                let grad = tensor.node.grad.borrow().clone();
                if let Some(g) = grad {
                    f(&g);
                }
            }
        }
        Ok(())
    }

    fn topological_order(&self) -> Vec<Tensor> {
        let mut order: Vec<Tensor> = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        // iterative postorder DFS
        let mut stack: Vec<(Tensor, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.node.id);
        while let Some((tensor, child)) = stack.pop() {
            if child < tensor.node.parents.len() {
                let next = tensor.node.parents[child].clone();
                stack.push((tensor, child + 1));
                if next.node.requires_grad && visited.insert(next.node.id) {
                    stack.push((next, 0));
                }
            } else {
                order.push(tensor);
            }
        }
        order
    }
}
