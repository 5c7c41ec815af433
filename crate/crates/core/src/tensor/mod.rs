//! Dense `f64` tensors with define-by-run reverse-mode differentiation.
//!
//! Tensors are immutable, reference counted and always contiguous in
//! row-major order. An operation records its inputs whenever gradient
//! tracking is enabled and at least one input requires a gradient. The
//! backward pass is itself written in terms of tensor operations, so running
//! it with `create_graph = true` yields gradients that can be differentiated
//! again. The gradient penalty of the Wasserstein critics relies on this.

mod autograd;
mod conv;
mod ops;
mod shape;
mod spatial;

use std::cell::Cell;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};

pub use autograd::{backward, grad, Gradients};
pub use conv::ConvGeometry;
pub(crate) use autograd::Op;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Restores the previous gradient-tracking mode when dropped.
#[must_use = "gradient mode is restored as soon as the guard is dropped"]
pub struct GradModeGuard {
    previous: bool,
}

impl Drop for GradModeGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|flag| flag.set(self.previous));
    }
}

/// Disables graph recording on the current thread until the guard drops.
pub fn no_grad() -> GradModeGuard {
    set_grad_enabled(false)
}

pub fn set_grad_enabled(enabled: bool) -> GradModeGuard {
    let previous = GRAD_ENABLED.with(|flag| flag.replace(enabled));
    GradModeGuard { previous }
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(Cell::get)
}

/// A reference-counted, immutable n-dimensional array of `f64`.
#[derive(Clone)]
pub struct Tensor(Arc<Inner>);

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    /// `None` for constants, `Some(Op::Leaf)` for variables.
    op: Option<Op>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn build(data: Arc<Vec<f64>>, shape: Vec<usize>, op: Option<Op>) -> Tensor {
        debug_assert_eq!(data.len(), numel(&shape));
        Tensor(Arc::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            op,
        }))
    }

    /// Creates the result of an operation, recording `op` only when needed.
    pub(crate) fn from_op(data: Vec<f64>, shape: Vec<usize>, op: Op) -> Tensor {
        Self::from_op_shared(Arc::new(data), shape, op)
    }

    pub(crate) fn from_op_shared(data: Arc<Vec<f64>>, shape: Vec<usize>, op: Op) -> Tensor {
        let record = is_grad_enabled() && op.inputs().iter().any(|t| t.requires_grad());
        Self::build(data, shape, record.then_some(op))
    }

    /// A constant tensor (never receives gradients).
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if data.len() != numel(shape) {
            return Err(Error::shape(
                "Tensor::new",
                format!("{} values for shape {:?}", data.len(), shape),
            ));
        }
        Ok(Self::build(Arc::new(data), shape.to_vec(), None))
    }

    /// A leaf tensor that accumulates gradients.
    pub fn variable(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        let t = Self::new(data, shape)?;
        Ok(t.to_variable())
    }

    pub fn scalar(value: f64) -> Tensor {
        Self::build(Arc::new(vec![value]), Vec::new(), None)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Tensor {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        Self::build(Arc::new(vec![value; numel(shape)]), shape.to_vec(), None)
    }

    pub fn zeros_like(&self) -> Tensor {
        Self::zeros(self.shape())
    }

    pub fn ones_like(&self) -> Tensor {
        Self::ones(self.shape())
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.as_ref().clone()
    }

    pub(crate) fn shared_data(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.0.data)
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        match self.data() {
            [v] => Ok(*v),
            d => Err(Error::shape(
                "item",
                format!("expected one element, tensor has {}", d.len()),
            )),
        }
    }

    pub fn requires_grad(&self) -> bool {
        self.0.op.is_some()
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.0.op, Some(Op::Leaf) | None)
    }

    pub(crate) fn op(&self) -> Option<&Op> {
        self.0.op.as_ref()
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Self::build(self.shared_data(), self.shape().to_vec(), None)
    }

    /// Same values as a fresh leaf variable.
    pub fn to_variable(&self) -> Tensor {
        Self::build(self.shared_data(), self.shape().to_vec(), Some(Op::Leaf))
    }

    /// Size of a 4-D (N, C, H, W) tensor.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match *self.shape() {
            [n, c, h, w] => Ok((n, c, h, w)),
            ref s => Err(Error::shape("dims4", format!("expected NCHW, got {s:?}"))),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data().iter().all(|v| v.is_finite())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f64> = self.data().iter().take(6).copied().collect();
        f.debug_struct("Tensor")
            .field("id", &self.id())
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .field("head", &preview)
            .finish()
    }
}

#[cfg(test)]
mod tests;
