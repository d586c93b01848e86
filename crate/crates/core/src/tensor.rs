//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a cheaply clonable handle to a row-major buffer plus an
//! optional gradient. Differentiable operations (see [`crate::ops`]) record
//! a backward step on a [`Tape`]; [`Tape::backward`] replays the recorded
//! steps in reverse, accumulating gradients into every tensor that requires
//! them, and leaves the tape empty.
//!
//! Tapes and tensors are single-writer: one tape per training step, no
//! sharing across threads. Frozen parameters are exported/imported as raw
//! `(name, shape, data)` triples for parallel inference.

use std::cell::{Cell, Ref, RefCell};
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

struct TensorCell<S> {
    shape: Vec<usize>,
    data: RefCell<Vec<S>>,
    grad: RefCell<Option<Vec<S>>>,
    requires_grad: Cell<bool>,
}

/// Shared handle to an n-dimensional row-major value.
pub struct Tensor<S: Scalar> {
    cell: Rc<TensorCell<S>>,
}

impl<S: Scalar> Clone for Tensor<S> {
    fn clone(&self) -> Self {
        Tensor {
            cell: Rc::clone(&self.cell),
        }
    }
}

impl<S: Scalar> std::fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.cell.shape)
            .field("requires_grad", &self.cell.requires_grad.get())
            .finish()
    }
}

impl<S: Scalar> Tensor<S> {
    /// Build a tensor, validating shape/length agreement and finiteness.
    pub fn from_vec(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::ShapeMismatch {
                op: "from_vec",
                detail: format!("shape {:?} holds {} values, got {}", shape, numel, data.len()),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "non-finite value {} at flat index {i}",
                data[i]
            )));
        }
        Ok(Self::new_unchecked(shape, data))
    }

    pub(crate) fn new_unchecked(shape: Vec<usize>, data: Vec<S>) -> Self {
        Tensor {
            cell: Rc::new(TensorCell {
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad: Cell::new(false),
            }),
        }
    }

    /// Trainable parameter: like [`from_vec`](Self::from_vec) with gradients enabled.
    pub fn param(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let t = Self::from_vec(shape, data)?;
        t.cell.requires_grad.set(true);
        Ok(t)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::new_unchecked(shape, vec![S::zero(); n])
    }

    pub fn scalar(v: S) -> Self {
        Self::new_unchecked(vec![], vec![v])
    }

    pub fn shape(&self) -> &[usize] {
        &self.cell.shape
    }

    pub fn numel(&self) -> usize {
        self.cell.data.borrow().len()
    }

    /// Rows/cols of a rank-2 tensor (scalars and vectors are rejected).
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.cell.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::ShapeMismatch {
                op: "dims2",
                detail: format!("expected rank 2, got {:?}", other),
            }),
        }
    }

    pub fn data(&self) -> Ref<'_, Vec<S>> {
        self.cell.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<S> {
        self.cell.data.borrow().clone()
    }

    /// The single value of a scalar tensor.
    pub fn item(&self) -> Result<S> {
        let d = self.cell.data.borrow();
        if d.len() != 1 {
            return Err(Error::Contract(format!(
                "item() on tensor with {} elements",
                d.len()
            )));
        }
        Ok(d[0])
    }

    pub fn requires_grad(&self) -> bool {
        self.cell.requires_grad.get()
    }

    pub fn set_requires_grad(&self, v: bool) {
        self.cell.requires_grad.set(v);
    }

    pub fn grad(&self) -> Option<Vec<S>> {
        self.cell.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.cell.grad.borrow_mut() = None;
    }

    /// Add `delta` into the gradient buffer (allocated on first use).
    /// No-op unless the tensor requires gradients.
    pub fn accumulate_grad(&self, delta: &[S]) {
        if !self.requires_grad() {
            return;
        }
        let mut g = self.cell.grad.borrow_mut();
        match g.as_mut() {
            Some(buf) => {
                for (b, d) in buf.iter_mut().zip(delta) {
                    *b += *d;
                }
            }
            None => *g = Some(delta.to_vec()),
        }
    }

    /// Run `f` over the (zero-initialized) gradient buffer. Used by backward
    /// steps that write gradients in place (e.g. gemm with beta=1).
    /// No-op unless the tensor requires gradients.
    pub fn with_grad_mut(&self, f: impl FnOnce(&mut [S])) {
        if !self.requires_grad() {
            return;
        }
        let mut g = self.cell.grad.borrow_mut();
        if g.is_none() {
            *g = Some(vec![S::zero(); self.cell.data.borrow().len()]);
        }
        f(g.as_mut().unwrap());
    }

    /// In-place update of the value buffer (optimizer steps, loading).
    pub fn update_data(&self, f: impl FnOnce(&mut [S])) {
        f(&mut self.cell.data.borrow_mut());
    }

    /// Replace the value buffer; the length must match.
    pub fn set_data(&self, values: &[S]) -> Result<()> {
        let mut d = self.cell.data.borrow_mut();
        if d.len() != values.len() {
            return Err(Error::ShapeMismatch {
                op: "set_data",
                detail: format!("expected {} values, got {}", d.len(), values.len()),
            });
        }
        d.copy_from_slice(values);
        Ok(())
    }

    fn ptr_id(&self) -> usize {
        Rc::as_ptr(&self.cell) as usize
    }
}

type BackwardStep<S> = Box<dyn FnOnce(&Tape<S>)>;

/// Ordered record of differentiable operations.
///
/// Ops push one backward step each; [`backward`](Tape::backward) pops and
/// runs them in reverse, then the tape is empty. An inactive tape records
/// nothing, which is how inference-mode forward passes are run.
pub struct Tape<S: Scalar> {
    steps: RefCell<Vec<BackwardStep<S>>>,
    active: bool,
}

impl<S: Scalar> Tape<S> {
    /// Recording tape for training.
    pub fn new() -> Self {
        Tape {
            steps: RefCell::new(Vec::new()),
            active: true,
        }
    }

    /// Non-recording tape: forward passes only, no gradients.
    pub fn inference() -> Self {
        Tape {
            steps: RefCell::new(Vec::new()),
            active: false,
        }
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    pub fn len(&self) -> usize {
        self.steps.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.borrow().is_empty()
    }

    /// Record a backward step for an op whose inputs `require` gradients.
    /// Marks the output as gradient-requiring so downstream ops chain.
    pub(crate) fn record(
        &self,
        inputs_require: bool,
        output: &Tensor<S>,
        step: impl FnOnce(&Tape<S>) + 'static,
    ) {
        if self.active && inputs_require {
            output.set_requires_grad(true);
            self.steps.borrow_mut().push(Box::new(step));
        }
    }

    /// Reverse-replay the tape from a scalar loss, populating gradients of
    /// every tensor that requires them. Clears the tape.
    pub fn backward(&self, loss: &Tensor<S>) -> Result<()> {
        if loss.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        if !self.active {
            return Err(Error::Contract(
                "backward on an inference (non-recording) tape".into(),
            ));
        }
        if !loss.requires_grad() {
            return Err(Error::Contract(
                "loss does not depend on any gradient-requiring tensor".into(),
            ));
        }
        loss.accumulate_grad(&[S::one()]);
        loop {
            let step = self.steps.borrow_mut().pop();
            match step {
                Some(s) => s(self),
                None => break,
            }
        }
        Ok(())
    }
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Tape::new()
    }
}

/// Frozen copy of a named tensor, used for checkpoints and thread-safe
/// inference snapshots (plain data, `Send + Sync`).
#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor<S> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<S>,
}

impl<S: Scalar> RawTensor<S> {
    pub fn of(name: impl Into<String>, t: &Tensor<S>) -> Self {
        RawTensor {
            name: name.into(),
            shape: t.shape().to_vec(),
            data: t.to_vec(),
        }
    }
}

/// Dedup helper: detect aliased tensors (same underlying buffer).
pub fn same_tensor<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> bool {
    a.ptr_id() == b.ptr_id()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops;

    #[test]
    fn construction_validates() {
        assert!(Tensor::<f64>::from_vec(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::<f64>::from_vec(vec![2], vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::<f64>::from_vec(vec![2], vec![1.0, f64::INFINITY]).is_err());
        let t = Tensor::<f64>::from_vec(vec![2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.shape(), &[2, 3]);
        assert_eq!(t.numel(), 6);
    }

    #[test]
    fn backward_requires_scalar() {
        let tape = Tape::<f64>::new();
        let w = Tensor::param(vec![2], vec![1.0, 2.0]).unwrap();
        let y = ops::mul(&tape, &w, &w).unwrap();
        assert!(tape.backward(&y).is_err());
        let loss = ops::sum_all(&tape, &y).unwrap();
        tape.backward(&loss).unwrap();
        assert_eq!(w.grad().unwrap(), vec![2.0, 4.0]);
        assert!(tape.is_empty(), "tape must be cleared after backward");
    }

    #[test]
    fn grads_accumulate_once_per_use() {
        // loss = sum(w) + sum(w) -> grad = 2 everywhere
        let tape = Tape::<f64>::new();
        let w = Tensor::param(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let s1 = ops::sum_all(&tape, &w).unwrap();
        let s2 = ops::sum_all(&tape, &w).unwrap();
        let loss = ops::add(&tape, &s1, &s2).unwrap();
        tape.backward(&loss).unwrap();
        assert_eq!(w.grad().unwrap(), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn inference_tape_records_nothing() {
        let tape = Tape::<f64>::inference();
        let w = Tensor::param(vec![2], vec![1.0, 2.0]).unwrap();
        let y = ops::mul(&tape, &w, &w).unwrap();
        assert!(!y.requires_grad());
        assert!(tape.is_empty());
    }
}
