//! Minimal reverse-mode automatic differentiation over dense row-major tensors.
//!
//! A [`Tensor`] is an immutable value plus an optional record of the operation
//! that produced it. Calling [`Tensor::backward`] on a scalar walks the
//! recorded graph in reverse topological order and accumulates gradients into
//! every reachable tensor that requires them.

mod conv;
mod element;
mod ops;
mod optim;
mod layers;

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

pub use conv::Padding;
pub use element::Element;
pub use optim::{adam_update, Adam, AdamConfig, AdamState};
pub use layers::{Conv2dLayer, DenseLayer, FireLayer, FireSpec, LayerSpec};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` with graph recording disabled on the current thread.
///
/// Outputs produced inside never require grad, so intermediate values are
/// released as soon as they go out of scope.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

pub(crate) trait Backward<T: Element>: Send + Sync {
    /// Gradients w.r.t. each parent, in order. `None` for parents that do not
    /// require grad.
    fn backward(&self, parents: &[Tensor<T>], out: &[T], grad_out: &[T]) -> Vec<Option<Vec<T>>>;
}

struct Node<T: Element> {
    id: u64,
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<T>>>,
    parents: Vec<Tensor<T>>,
    op: Option<Box<dyn Backward<T>>>,
}

/// Dense n-dimensional array with optional gradient tracking.
///
/// Cloning is cheap and shares the underlying node.
pub struct Tensor<T: Element = f32> {
    node: Arc<Node<T>>,
}

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Self {
            node: Arc::clone(&self.node),
        }
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad)
            .finish_non_exhaustive()
    }
}

fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Element> Tensor<T> {
    fn build(
        data: Vec<T>,
        shape: Vec<usize>,
        requires_grad: bool,
        parents: Vec<Tensor<T>>,
        op: Option<Box<dyn Backward<T>>>,
    ) -> Self {
        debug_assert_eq!(numel_of(&shape), data.len());
        Self {
            node: Arc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                grad: Mutex::new(None),
                parents,
                op,
            }),
        }
    }

    /// Creates a constant tensor. Fails when `shape` does not match `data`.
    pub fn new(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::invalid(format!("tensor extents must be positive, got {shape:?}")));
        }
        if numel_of(shape) != data.len() {
            return Err(Error::invalid(format!(
                "shape {shape:?} needs {} values, got {}",
                numel_of(shape),
                data.len()
            )));
        }
        Ok(Self::build(data, shape.to_vec(), false, Vec::new(), None))
    }

    /// Creates a trainable leaf tensor.
    pub fn parameter(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        let t = Self::new(data, shape)?;
        Ok(Self::build(t.data().to_vec(), shape.to_vec(), true, Vec::new(), None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::build(vec![T::zero(); numel_of(shape)], shape.to_vec(), false, Vec::new(), None)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::build(vec![value; numel_of(shape)], shape.to_vec(), false, Vec::new(), None)
    }

    pub fn scalar(value: T) -> Self {
        Self::build(vec![value], Vec::new(), false, Vec::new(), None)
    }

    /// Output of a recorded operation. Records the graph edge only when grad
    /// mode is on and some parent requires grad.
    pub(crate) fn from_op(
        data: Vec<T>,
        shape: Vec<usize>,
        parents: Vec<Tensor<T>>,
        op: impl Backward<T> + 'static,
    ) -> Self {
        let track = grad_enabled() && parents.iter().any(Tensor::requires_grad);
        if track {
            Self::build(data, shape, true, parents, Some(Box::new(op)))
        } else {
            Self::build(data, shape, false, Vec::new(), None)
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn data(&self) -> &[T] {
        &self.node.data
    }

    pub fn numel(&self) -> usize {
        self.node.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    /// Identity of the underlying node; equal for clones.
    pub fn id(&self) -> u64 {
        self.node.id
    }

    /// Copy of the accumulated gradient, if a backward pass reached this tensor.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.node.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.lock().expect("grad lock poisoned") = None;
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.node.data[0]
    }

    /// Constant copy sharing no graph history.
    pub fn detach(&self) -> Self {
        Self::build(self.data().to_vec(), self.shape().to_vec(), false, Vec::new(), None)
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.node.data.clone()
    }

    pub fn all_finite(&self) -> bool {
        self.data().iter().all(|v| v.is_finite())
    }

    /// Reverse-mode pass from this scalar. Gradients accumulate across calls
    /// until [`Tensor::zero_grad`] is called on each tensor.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Err(Error::invalid("backward root does not require grad"));
        }

        let order = self.topological_order();
        let mut pending: HashMap<u64, Vec<T>> = HashMap::new();
        pending.insert(self.id(), vec![T::one()]);

        for tensor in order.iter().rev() {
            let Some(grad) = pending.remove(&tensor.id()) else {
                continue;
            };
            let node = &tensor.node;
            if let Some(op) = &node.op {
                let parent_grads = op.backward(&node.parents, &node.data, &grad);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (parent, pg) in node.parents.iter().zip(parent_grads) {
                    let Some(pg) = pg else { continue };
                    if !parent.requires_grad() {
                        continue;
                    }
                    debug_assert_eq!(pg.len(), parent.numel());
                    match pending.get_mut(&parent.id()) {
                        Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, g)| *a += *g),
                        None => {
                            pending.insert(parent.id(), pg);
                        }
                    }
                }
            }
            let mut slot = node.grad.lock().expect("grad lock poisoned");
            match slot.as_mut() {
                Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, g)| *a += *g),
                None => *slot = Some(grad),
            }
        }
        Ok(())
    }

    /// Post-order over grad-requiring ancestors, root last.
    fn topological_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            for p in &t.node.parents {
                if p.requires_grad() && !visited.contains(&p.id()) {
                    stack.push((p.clone(), false));
                }
            }
        }
        order
    }
}
