//! Dense `f64` tensors with reverse-mode differentiation.
//!
//! Every [`Tensor`] is a node in a dynamically built graph. Operations whose
//! inputs require gradients record a [`GradFn`] holding handles to those
//! inputs; [`Tensor::backward`] walks the graph in reverse topological order
//! and accumulates gradients into the leaf tensors created with
//! [`Tensor::parameter`].
//!
//! Handles are reference counted (`Arc`) so a tensor can be moved to another
//! thread, but a single graph is meant to be driven from one thread.

mod batchnorm;
mod conv;
mod ops;
mod pool;
mod upsample;

pub use batchnorm::{batch_norm, BatchNormStats, Mode, BN_EPSILON, BN_MOMENTUM};
pub use conv::{conv2d, Conv2dParams, Padding};
pub use ops::{concat_channels, matmul_affine};
pub use pool::{pool2d, PoolKind, PoolParams};
pub use upsample::bilinear_upsample;

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, RwLock, RwLockReadGuard, RwLockWriteGuard};

use crate::error::{ensure_shape, Error, Result};

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording any graph nodes on the current thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let out = f();
    GRAD_ENABLED.with(|g| g.set(prev));
    out
}

pub(crate) fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Backward rule of a recorded operation.
pub(crate) trait GradFn: Send + Sync {
    /// Inputs of the operation, in the order `backward` returns gradients.
    fn inputs(&self) -> Vec<&Tensor>;

    /// Maps the gradient of the output to one gradient per input. Inputs
    /// that do not require a gradient may receive `None`.
    fn backward(&self, output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>>;
}

struct Node {
    id: usize,
    shape: Vec<usize>,
    data: RwLock<Vec<f64>>,
    grad: RwLock<Option<Vec<f64>>>,
    requires_grad: bool,
    grad_fn: Option<Box<dyn GradFn>>,
}

/// N-dimensional value grid, row-major, with an optional gradient slot.
#[derive(Clone)]
pub struct Tensor(Arc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.0.id)
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn build(
        shape: Vec<usize>,
        data: Vec<f64>,
        requires_grad: bool,
        grad_fn: Option<Box<dyn GradFn>>,
    ) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RwLock::new(data),
            grad: RwLock::new(None),
            requires_grad,
            grad_fn,
        }))
    }

    /// Constant tensor; gradients never flow into it.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        ensure_shape!(
            numel(shape) == data.len(),
            "data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    /// Learnable leaf tensor. [`Tensor::backward`] accumulates into its grad.
    pub fn parameter(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        ensure_shape!(
            numel(shape) == data.len(),
            "data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Ok(Self::build(shape.to_vec(), data, true, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::build(shape.to_vec(), vec![0.0; numel(shape)], false, None)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self::build(shape.to_vec(), vec![value; numel(shape)], false, None)
    }

    pub fn scalar(value: f64) -> Self {
        Self::build(vec![], vec![value], false, None)
    }

    /// Result of an operation. A grad fn is attached only when recording is
    /// enabled and at least one input needs a gradient.
    pub(crate) fn from_op<G: GradFn + 'static>(
        shape: Vec<usize>,
        data: Vec<f64>,
        grad_fn: impl FnOnce() -> G,
        inputs: &[&Tensor],
    ) -> Self {
        let track = grad_enabled() && inputs.iter().any(|t| t.requires_grad());
        if track {
            Self::build(shape, data, true, Some(Box::new(grad_fn())))
        } else {
            Self::build(shape, data, false, None)
        }
    }

    pub fn id(&self) -> usize {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn ndim(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel(&self.0.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    pub fn data(&self) -> RwLockReadGuard<'_, Vec<f64>> {
        self.0.data.read().expect("tensor data lock poisoned")
    }

    /// Mutable access to the values, used by optimizers and finite-difference
    /// probes. Graphs already built from this tensor are not updated.
    pub fn data_mut(&self) -> RwLockWriteGuard<'_, Vec<f64>> {
        self.0.data.write().expect("tensor data lock poisoned")
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        let d = self.data();
        assert_eq!(d.len(), 1, "item() on tensor with {} elements", d.len());
        d[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.read().expect("tensor grad lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.write().expect("tensor grad lock poisoned") = None;
    }

    /// Overwrites the gradient slot; `grad` must match the tensor's length.
    pub fn set_grad(&self, grad: Option<Vec<f64>>) {
        if let Some(g) = &grad {
            assert_eq!(g.len(), self.numel());
        }
        *self.0.grad.write().expect("tensor grad lock poisoned") = grad;
    }

    /// Copy of the values with no graph history.
    pub fn detach(&self) -> Tensor {
        Self::build(self.0.shape.clone(), self.to_vec(), false, None)
    }

    /// Scalar depending on `input` whose gradient was already computed:
    /// backward hands `upstream * grad` to `input`.
    pub(crate) fn scalar_with_grad(input: &Tensor, value: f64, grad: Vec<f64>) -> Tensor {
        struct Precomputed {
            input: Tensor,
            grad: Vec<f64>,
        }
        impl GradFn for Precomputed {
            fn inputs(&self) -> Vec<&Tensor> {
                vec![&self.input]
            }
            fn backward(&self, _output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
                vec![Some(self.grad.iter().map(|g| g * grad[0]).collect())]
            }
        }
        debug_assert_eq!(grad.len(), input.numel());
        Tensor::from_op(
            vec![],
            vec![value],
            || Precomputed {
                input: input.clone(),
                grad,
            },
            &[input],
        )
    }

    fn accumulate_grad(&self, g: &[f64]) {
        let mut slot = self.0.grad.write().expect("tensor grad lock poisoned");
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Back-propagates from this scalar into every reachable parameter.
    ///
    /// Gradients add onto whatever the parameters already hold, so two calls
    /// without [`Tensor::zero_grad`] in between sum their contributions.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        let order = self.topo_order();
        let mut pending: HashMap<usize, Vec<f64>> = HashMap::new();
        pending.insert(self.id(), vec![1.0]);

        for node in order.iter().rev() {
            let Some(grad) = pending.remove(&node.id()) else {
                continue;
            };
            let Some(grad_fn) = node.0.grad_fn.as_ref() else {
                node.accumulate_grad(&grad);
                continue;
            };
            let inputs = grad_fn.inputs();
            let input_grads = grad_fn.backward(node, &grad);
            debug_assert_eq!(inputs.len(), input_grads.len());
            for (input, g) in inputs.into_iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !input.requires_grad() {
                    continue;
                }
                debug_assert_eq!(g.len(), input.numel());
                match pending.get_mut(&input.id()) {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => {
                        pending.insert(input.id(), g);
                    }
                }
            }
        }
        Ok(())
    }

    /// Nodes requiring gradients reachable from `self`, parents before
    /// children.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        // Iterative post-order DFS; the graph can be deep enough to blow the stack.
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.id()) {
                continue;
            }
            stack.push((node.clone(), true));
            if let Some(f) = node.0.grad_fn.as_ref() {
                for input in f.inputs() {
                    if input.requires_grad() && !visited.contains(&input.id()) {
                        stack.push((input.clone(), false));
                    }
                }
            }
        }
        order
    }
}
