//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a row-major flat buffer plus shape. Operations run through
//! a [`Tape`](tape::Tape); when the tape is recording, each op appends a node
//! carrying enough state for an exact backward pass. Parameter tensors are
//! immutable during forward/backward; optimizers mutate them between steps.

pub mod grad_check;
pub mod io;
pub mod scalar;
pub mod tape;

pub use grad_check::grad_check;
pub use scalar::Scalar;
pub use tape::{GradMap, Tape};

use std::rc::Rc;

use crate::error::{Error, Result};

/// Handle tying a tensor to the tape node that produced it. The token guards
/// against mixing tensors across tapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TapeRef {
    pub(crate) token: u64,
    pub(crate) node: usize,
}

/// Dense multi-dimensional array of `E` (row-major).
///
/// Data is reference-counted so the tape can retain activations without
/// copying. `grad` is filled by [`tape::GradMap::store_into`] after a
/// backward pass; it is `None` otherwise.
#[derive(Debug, Clone)]
pub struct Tensor<E: Scalar = f32> {
    dims: Vec<usize>,
    data: Rc<Vec<E>>,
    grad: Option<Vec<E>>,
    tape: Option<TapeRef>,
}

impl<E: Scalar> Tensor<E> {
    pub fn from_vec(dims: Vec<usize>, data: Vec<E>) -> Result<Self> {
        let numel: usize = dims.iter().product();
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Contract(format!("zero extent in dims {dims:?}")));
        }
        if numel != data.len() {
            return Err(Error::dim("from_vec", &dims, data.len()));
        }
        Ok(Tensor { dims, data: Rc::new(data), grad: None, tape: None })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let numel: usize = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: Rc::new(vec![E::zero(); numel]),
            grad: None,
            tape: None,
        }
    }

    pub fn full(dims: &[usize], value: E) -> Self {
        let numel: usize = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: Rc::new(vec![value; numel]),
            grad: None,
            tape: None,
        }
    }

    pub fn scalar(value: E) -> Self {
        Tensor { dims: vec![1], data: Rc::new(vec![value]), grad: None, tape: None }
    }

    /// 2-D identity matrix.
    pub fn eye(n: usize) -> Self {
        let mut data = vec![E::zero(); n * n];
        for i in 0..n {
            data[i * n + i] = E::one();
        }
        Tensor { dims: vec![n, n], data: Rc::new(data), grad: None, tape: None }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub(crate) fn data_rc(&self) -> Rc<Vec<E>> {
        Rc::clone(&self.data)
    }

    pub fn grad(&self) -> Option<&[E]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Option<Vec<E>>) {
        debug_assert!(grad.as_ref().map_or(true, |g| g.len() == self.numel()));
        self.grad = grad;
    }

    pub fn tape_ref(&self) -> Option<TapeRef> {
        self.tape
    }

    pub(crate) fn tracked(dims: Vec<usize>, data: Rc<Vec<E>>, tape: Option<TapeRef>) -> Self {
        Tensor { dims, data, grad: None, tape }
    }

    /// Detached copy: same values, no tape linkage.
    pub fn detach(&self) -> Self {
        Tensor { dims: self.dims.clone(), data: Rc::clone(&self.data), grad: None, tape: None }
    }

    /// Single element of a scalar tensor.
    pub fn item(&self) -> Result<E> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "item() on tensor of shape {:?}",
                self.dims
            )));
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Mutable access to the underlying buffer. Clones if the data is shared
    /// with a live tape, so past recordings stay intact.
    pub fn data_mut(&mut self) -> &mut [E] {
        self.tape = None;
        let v: &mut Vec<E> = Rc::make_mut(&mut self.data);
        v.as_mut_slice()
    }

    /// Convert the element type (used to lift f32 parameters into f64
    /// verification runs).
    pub fn cast<F: Scalar>(&self) -> Tensor<F> {
        Tensor {
            dims: self.dims.clone(),
            data: Rc::new(self.data.iter().map(|v| F::from_f64_lossy(v.as_f64())).collect()),
            grad: None,
            tape: None,
        }
    }
}

impl<E: Scalar> PartialEq for Tensor<E> {
    fn eq(&self, other: &Self) -> bool {
        self.dims == other.dims && self.data == other.data
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_numel() {
        assert!(Tensor::<f32>::from_vec(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f32>::from_vec(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::from_vec(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn cast_round_trip_is_exact_for_f32_values() {
        let t = Tensor::<f32>::from_vec(vec![3], vec![1.5, -2.25, 3.0]).unwrap();
        let back: Tensor<f32> = t.cast::<f64>().cast::<f32>();
        assert_eq!(t, back);
    }

    #[test]
    fn item_rejects_non_scalar() {
        let t = Tensor::<f32>::zeros(&[2]);
        assert!(t.item().is_err());
        assert_eq!(Tensor::<f32>::scalar(4.0).item().unwrap(), 4.0);
    }
}
