//! Dense f32 tensors with reverse-mode automatic differentiation.
//!
//! Tensors are freely shareable handles (`Arc` inside); a [`Tape`] records
//! backward closures as operations execute and replays them in exact reverse
//! order. An op is recorded only when the tape is recording and at least one
//! input carries `requires_grad`, so a frozen model contributes activations
//! but never receives gradient.
//!
//! Storage is 32-bit; reductions (matmul inner products, means, losses)
//! accumulate in 64-bit.

mod kernels;
pub mod gradcheck;
pub mod ops;
pub mod optim;

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};

use crate::error::{Error, Result};

pub use optim::Optimizer;

struct Inner {
    shape: Vec<usize>,
    data: RwLock<Vec<f32>>,
    grad: Mutex<Option<Vec<f32>>>,
    requires_grad: AtomicBool,
}

/// Shareable dense tensor. Cloning is shallow.
#[derive(Clone)]
pub struct Tensor {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.requires_grad())
            .finish()
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>, requires_grad: bool) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Self::from_parts(shape, data, requires_grad))
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f32>, requires_grad: bool) -> Self {
        Tensor {
            inner: Arc::new(Inner {
                shape,
                data: RwLock::new(data),
                grad: Mutex::new(None),
                requires_grad: AtomicBool::new(requires_grad),
            }),
        }
    }

    pub fn zeros(shape: Vec<usize>, requires_grad: bool) -> Self {
        let numel: usize = shape.iter().product();
        Self::from_parts(shape, vec![0.0; numel], requires_grad)
    }

    pub fn scalar(value: f32) -> Self {
        Self::from_parts(vec![1], vec![value], false)
    }

    /// N(0, std) initialization from the given stream.
    pub fn randn(shape: Vec<usize>, std: f64, rng: &mut crate::rng::Rng, requires_grad: bool) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| (rng.normal() * std) as f32).collect();
        Self::from_parts(shape, data, requires_grad)
    }

    /// U(-bound, bound) initialization from the given stream.
    pub fn rand_uniform(
        shape: Vec<usize>,
        bound: f64,
        rng: &mut crate::rng::Rng,
        requires_grad: bool,
    ) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel)
            .map(|_| rng.uniform(-bound, bound) as f32)
            .collect();
        Self::from_parts(shape, data, requires_grad)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad.load(Ordering::Relaxed)
    }

    pub(crate) fn set_requires_grad(&self, value: bool) {
        self.inner.requires_grad.store(value, Ordering::Relaxed);
    }

    /// Copy of the underlying values.
    pub fn to_vec(&self) -> Vec<f32> {
        self.inner.data.read().clone()
    }

    /// Scalar value (panics if not scalar).
    pub fn item(&self) -> f32 {
        assert!(self.is_scalar(), "item() on non-scalar tensor");
        self.inner.data.read()[0]
    }

    /// Run `f` over the raw values without copying.
    pub fn with_data<R>(&self, f: impl FnOnce(&[f32]) -> R) -> R {
        f(&self.inner.data.read())
    }

    /// Mutate the raw values in place (optimizer steps, test setup).
    pub fn with_data_mut<R>(&self, f: impl FnOnce(&mut [f32]) -> R) -> R {
        f(&mut self.inner.data.write())
    }

    /// Copy of the accumulated gradient, if any.
    pub fn grad(&self) -> Option<Vec<f32>> {
        self.inner.grad.lock().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.lock() = None;
    }

    /// Accumulate `delta` into the gradient slot (allocating zeros on first use).
    pub(crate) fn accumulate_grad(&self, delta: &[f32]) {
        debug_assert_eq!(delta.len(), self.numel());
        let mut slot = self.inner.grad.lock();
        match slot.as_mut() {
            Some(g) => {
                for (gi, &d) in g.iter_mut().zip(delta) {
                    *gi += d;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    pub(crate) fn accumulate_grad_f64(&self, delta: &[f64]) {
        debug_assert_eq!(delta.len(), self.numel());
        let mut slot = self.inner.grad.lock();
        let g = slot.get_or_insert_with(|| vec![0.0; delta.len()]);
        kernels::add_f64_into_f32(g, delta);
    }

    /// Deep copy with its own storage and cleared gradient.
    pub fn deep_clone(&self, requires_grad: bool) -> Self {
        Self::from_parts(self.inner.shape.clone(), self.to_vec(), requires_grad)
    }

    /// True when two handles point at the same storage.
    pub fn same_storage(&self, other: &Tensor) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
    }

    /// Errors if any element is NaN or infinite.
    pub fn check_finite(&self, context: &str) -> Result<()> {
        let data = self.inner.data.read();
        for (i, &v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite value {v} at flat index {i} in {context}"
                )));
            }
        }
        Ok(())
    }
}

type BackwardFn = Box<dyn Fn()>;

/// Reverse-mode gradient tape. Single-writer: one tape per training step, on
/// one thread. Backward replays recorded closures in exact reverse order.
///
/// Gradients of leaf tensors (parameters) accumulate across backward calls;
/// op outputs recorded on the tape have their slots reset at the start of
/// each backward, so calling backward twice doubles the leaf gradients.
pub struct Tape {
    recording: bool,
    ops: std::cell::RefCell<Vec<BackwardFn>>,
    outputs: std::cell::RefCell<Vec<Tensor>>,
}

impl Tape {
    /// Tape that records backward closures.
    pub fn recording() -> Self {
        Tape {
            recording: true,
            ops: std::cell::RefCell::new(Vec::new()),
            outputs: std::cell::RefCell::new(Vec::new()),
        }
    }

    /// Tape that records nothing; forward values only.
    pub fn inference() -> Self {
        Tape {
            recording: false,
            ops: std::cell::RefCell::new(Vec::new()),
            outputs: std::cell::RefCell::new(Vec::new()),
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.ops.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Whether an op over these inputs should be recorded (and its output
    /// marked as gradient-carrying).
    pub(crate) fn tracks(&self, inputs: &[&Tensor]) -> bool {
        self.recording && inputs.iter().any(|t| t.requires_grad())
    }

    pub(crate) fn push(&self, outputs: &[&Tensor], f: impl Fn() + 'static) {
        let mut outs = self.outputs.borrow_mut();
        for t in outputs {
            outs.push((*t).clone());
        }
        self.ops.borrow_mut().push(Box::new(f));
    }

    /// Seed d(loss)/d(loss) = 1 and run all recorded ops in reverse.
    pub fn backward(&self, loss: &Tensor) -> Result<()> {
        if !loss.is_scalar() {
            return Err(Error::numeric(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        for t in self.outputs.borrow().iter() {
            t.zero_grad();
        }
        loss.accumulate_grad(&[1.0]);
        for op in self.ops.borrow().iter().rev() {
            op();
        }
        Ok(())
    }

    /// Drop all recorded operations (and the activations they keep alive).
    pub fn clear(&self) {
        self.ops.borrow_mut().clear();
        self.outputs.borrow_mut().clear();
    }
}

/// Helper for ops: read an output gradient if present.
pub(crate) fn out_grad(t: &Tensor) -> Option<Vec<f32>> {
    t.inner.grad.lock().clone()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_shape_data_mismatch() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5], false).is_err());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let tape = Tape::recording();
        let t = Tensor::zeros(vec![2], true);
        assert!(tape.backward(&t).is_err());
    }

    #[test]
    fn grad_accumulates_across_backward_calls() {
        let tape = Tape::recording();
        let x = Tensor::new(vec![3], vec![1.0, 2.0, 3.0], true).unwrap();
        let s = ops::sum(&tape, &x).unwrap();
        tape.backward(&s).unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0, 1.0]);
        tape.backward(&s).unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn check_finite_flags_nan() {
        let t = Tensor::new(vec![2], vec![1.0, f32::NAN], false).unwrap();
        assert!(t.check_finite("test").is_err());
    }
}
