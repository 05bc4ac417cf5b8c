//! Shaped floating-point arrays.
//!
//! [`Tensor`] is a plain value type: shape + row-major data + an optional
//! gradient buffer. It carries no tape reference, so tensors move freely
//! between threads; differentiation happens by registering a tensor as a
//! leaf on a [`super::Tape`].
//!
//! The element type is generic: `f64` for verification suites, `f32` for
//! training speed.

use std::fmt;

use crate::error::{Error, Result};

/// Scalar element of a [`Tensor`]. Implemented for `f32` and `f64`.
pub trait Element:
    num_traits::Float + fmt::Debug + fmt::Display + Default + Send + Sync + 'static
{
    const BITS: u32;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn from_f32(v: f32) -> Self;
    fn as_f32(self) -> f32;
}

impl Element for f32 {
    const BITS: u32 = 32;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn from_f32(v: f32) -> Self {
        v
    }
    fn as_f32(self) -> f32 {
        self
    }
}

impl Element for f64 {
    const BITS: u32 = 64;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn from_f32(v: f32) -> Self {
        v as f64
    }
    fn as_f32(self) -> f32 {
        self as f32
    }
}

/// Shaped floating-point array, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<E: Element> {
    shape: Vec<usize>,
    data: Vec<E>,
    requires_grad: bool,
    grad: Option<Vec<E>>,
}

impl<E: Element> Tensor<E> {
    /// Build a tensor from a shape and its row-major contents.
    pub fn from_vec(shape: impl Into<Vec<usize>>, values: Vec<E>) -> Result<Self> {
        let shape = shape.into();
        if shape.contains(&0) {
            return Err(Error::EmptyShape(shape));
        }
        let n: usize = shape.iter().product();
        if values.len() != n {
            return Err(Error::shape(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                n,
                values.len()
            )));
        }
        Ok(Tensor { shape, data: values, requires_grad: false, grad: None })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        assert!(shape.iter().all(|&d| d > 0), "zero dimension in {shape:?}");
        let n = shape.iter().product();
        Tensor { shape, data: vec![E::zero(); n], requires_grad: false, grad: None }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: E) -> Self {
        let mut t = Self::zeros(shape);
        t.data.iter_mut().for_each(|v| *v = value);
        t
    }

    pub fn scalar(value: E) -> Self {
        Tensor { shape: vec![1], data: vec![value], requires_grad: false, grad: None }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<E> {
        self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
    }

    pub fn with_requires_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    /// Gradient buffer, if one has been written back after a backward pass.
    pub fn grad(&self) -> Option<&[E]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Option<Vec<E>>) {
        if let Some(g) = &grad {
            assert_eq!(g.len(), self.data.len(), "gradient length mismatch");
        }
        self.grad = grad;
    }

    /// Extract the single element of a scalar tensor.
    pub fn item(&self) -> E {
        assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, E> {
        self.data.iter()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Convert the element type, e.g. checkpoint `f32` -> verification `f64`.
    pub fn cast<T: Element>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::from_f64(v.as_f64())).collect(),
            requires_grad: self.requires_grad,
            grad: None,
        }
    }
}

impl<E: Element> Tensor<E> {
    /// Convenience constructor from `f64` literals, for tests and configs.
    pub fn from_f64s(shape: impl Into<Vec<usize>>, values: &[f64]) -> Result<Self> {
        Self::from_vec(shape, values.iter().map(|&v| E::from_f64(v)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        let t = Tensor::<f64>::from_f64s([2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.data(), &[1.0, 2.0, 3.0, 4.0]);
        assert!(matches!(
            Tensor::<f64>::from_f64s([2, 2], &[1.0, 2.0, 3.0]),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(matches!(
            Tensor::<f64>::from_vec(vec![2, 0], vec![]),
            Err(Error::EmptyShape(_))
        ));
    }

    #[test]
    fn zero_tensor_sums_to_zero() {
        let t = Tensor::<f64>::from_f64s([3], &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(t.iter().copied().sum::<f64>(), 0.0);
    }

    #[test]
    fn cast_roundtrip_is_exact_f32_to_f64() {
        let t = Tensor::<f32>::from_f64s([2], &[0.1, -3.5]).unwrap();
        let back: Tensor<f32> = t.cast::<f64>().cast();
        assert_eq!(t.data(), back.data());
    }
}
