//! Dense tensors with reverse-mode differentiation.
//!
//! [`Tensor`] is the owned container used for parameters and data. Forward
//! computation happens on a [`Tape`], which records every operation so that
//! [`Tape::backward`] can propagate gradients to the leaves. Layers built on
//! the tape live in [`layers`], the optimizer in [`adam`], and the on-disk
//! container format in [`tnsr`].

pub mod adam;
pub mod layers;
mod ops;
pub mod tape;
pub mod tnsr;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{linalg::general_mat_mul, ArrayView2, ArrayViewMut2, LinalgScalar};
use num_traits::{Float, FromPrimitive, NumAssign};

use crate::error::{Error, Result};

pub use adam::{AdamConfig, AdamState};
pub use layers::{
    forward_layer, BatchNorm, Conv2d, Dropout, ForwardCtx, Layer, Linear, MaxPool2d, Mode, Module,
    Relu, Sequential,
};
pub use tape::{Gradients, Tape, Var};

/// Floating-point element type of a tensor. Implemented for `f32` (training)
/// and `f64` (verification).
pub trait Real:
    Float
    + FromPrimitive
    + NumAssign
    + LinalgScalar
    + Default
    + Debug
    + Display
    + Sum
    + Send
    + Sync
    + 'static
{
    const NAME: &'static str;

    fn as_f64(self) -> f64;
}

impl Real for f32 {
    const NAME: &'static str = "f32";

    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";

    fn as_f64(self) -> f64 {
        self
    }
}

/// Shorthand for converting an `f64` literal into a generic [`Real`].
#[inline]
pub(crate) fn r<T: Real>(v: f64) -> T {
    <T as FromPrimitive>::from_f64(v).expect("f64 converts to any Real")
}

/// Dense row-major tensor with an optional gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::contract(format!(
                "shape {shape:?} holds {numel} values but {} were given",
                data.len()
            )));
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: T) -> Self {
        Self::full(Vec::new(), value)
    }

    /// Marks the tensor as a trainable leaf.
    pub fn with_requires_grad(mut self, on: bool) -> Self {
        self.requires_grad = on;
        self
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `g` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[T]) -> Result<()> {
        if g.len() != self.data.len() {
            return Err(Error::contract(format!(
                "gradient of length {} for tensor of shape {:?}",
                g.len(),
                self.shape
            )));
        }
        match &mut self.grad {
            Some(buf) => buf.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
            None => self.grad = Some(g.to_vec()),
        }
        Ok(())
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::contract(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
            && self
                .grad
                .as_ref()
                .is_none_or(|g| g.iter().all(|v| v.is_finite()))
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    /// Converts element precision, dropping any gradient.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| r::<U>(v.as_f64())).collect(),
            requires_grad: self.requires_grad,
            grad: None,
        }
    }
}

/// Row-major `c = alpha * op(a) * op(b) + beta * c`, where `op(a)` is `[m, k]`
/// and `op(b)` is `[k, n]`. A transposed operand is stored with its dimensions
/// swapped.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Real>(
    trans_a: bool,
    trans_b: bool,
    m: usize,
    n: usize,
    k: usize,
    alpha: T,
    a: &[T],
    b: &[T],
    beta: T,
    c: &mut [T],
) {
    let a = &a[..m * k];
    let b = &b[..k * n];
    let a = if trans_a {
        ArrayView2::from_shape((k, m), a).unwrap().reversed_axes()
    } else {
        ArrayView2::from_shape((m, k), a).unwrap()
    };
    let b = if trans_b {
        ArrayView2::from_shape((n, k), b).unwrap().reversed_axes()
    } else {
        ArrayView2::from_shape((k, n), b).unwrap()
    };
    let mut c = ArrayViewMut2::from_shape((m, n), &mut c[..m * n]).unwrap();
    general_mat_mul(alpha, &a, &b, beta, &mut c);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn grad_accumulates() {
        let mut t = Tensor::<f64>::zeros(vec![2]);
        t.accumulate_grad(&[1.0, 2.0]).unwrap();
        t.accumulate_grad(&[0.5, 0.5]).unwrap();
        assert_eq!(t.grad().unwrap(), &[1.5, 2.5]);
        assert!(t.accumulate_grad(&[1.0]).is_err());
    }

    #[test]
    fn gemm_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0f64; 4];
        gemm(false, false, 2, 2, 2, 1.0, &a, &b, 0.0, &mut c);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(true, false, 2, 2, 2, 1.0, &a, &b, 0.0, &mut c);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(false, true, 2, 2, 2, 1.0, &a, &b, 0.0, &mut c);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }

    #[test]
    fn non_finite_is_reported() {
        let t = Tensor::new(vec![2], vec![1.0f32, f32::NAN]).unwrap();
        assert!(matches!(t.check_finite("x"), Err(Error::NonFinite(_))));
    }
}
