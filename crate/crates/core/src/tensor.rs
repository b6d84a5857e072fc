//! Dense row-major tensors over a selectable scalar precision.
//!
//! `f32` is the training default, `f64` the verification precision used by
//! the gradient-check and oracle suites. All reductions run in a fixed
//! row-major sequential order so forward results are bit-identical across
//! repeated runs on identical inputs.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use num_traits::Float;

/// Scalar element type: `f32` or `f64`.
pub trait Scalar: Float + fmt::Debug + Default + Copy + 'static {
    fn from_lit(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_lit(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_lit(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorError {
    /// Shapes incompatible for the named operation.
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    /// Data length does not match the product of the extents.
    LengthMismatch { shape: Vec<usize>, len: usize },
    /// A forward operation produced NaN or Inf.
    NonFinite { op: &'static str },
    /// Operation-specific precondition violated (message is static).
    Unsupported { op: &'static str, detail: &'static str },
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::ShapeMismatch { op, expected, got } => {
                write!(f, "{op}: shape mismatch, expected {expected:?}, got {got:?}")
            }
            TensorError::LengthMismatch { shape, len } => {
                write!(f, "data length {len} does not match shape {shape:?}")
            }
            TensorError::NonFinite { op } => write!(f, "{op}: non-finite value in output"),
            TensorError::Unsupported { op, detail } => write!(f, "{op}: {detail}"),
        }
    }
}

impl core::error::Error for TensorError {}

/// Dense n-dimensional array, row-major. A rank-0 tensor holds one scalar.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, TensorError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() || shape.iter().any(|&d| d == 0) {
            return Err(TensorError::LengthMismatch { shape, len: data.len() });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![T::zero(); numel] }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; numel] }
    }

    pub fn scalar(value: T) -> Self {
        Tensor { shape: Vec::new(), data: vec![value] }
    }

    pub fn zeros_like(&self) -> Self {
        Tensor { shape: self.shape.clone(), data: vec![T::zero(); self.data.len()] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// The single value of a rank-0 or one-element tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Row-major flat index for a 2-D tensor.
    #[inline]
    pub fn idx2(&self, i: usize, j: usize) -> usize {
        i * self.shape[1] + j
    }

    /// Row-major flat index for a 3-D tensor.
    #[inline]
    pub fn idx3(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.shape[1] + j) * self.shape[2] + k
    }

    pub fn at2(&self, i: usize, j: usize) -> T {
        self.data[self.idx2(i, j)]
    }

    pub fn at3(&self, i: usize, j: usize, k: usize) -> T {
        self.data[self.idx3(i, j, k)]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Self, TensorError> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                expected: shape,
                got: self.shape.clone(),
            });
        }
        Ok(Tensor { shape, data: self.data.clone() })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn check_finite(&self, op: &'static str) -> Result<(), TensorError> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(TensorError::NonFinite { op })
        }
    }

    /// Fixed-order (row-major sequential) sum of all elements.
    pub fn sum(&self) -> T {
        let mut acc = T::zero();
        for &x in &self.data {
            acc = acc + x;
        }
        acc
    }

    /// In-place `self += other`, shapes must match.
    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a = *a + b;
        }
    }

    pub fn scale_in_place(&mut self, factor: T) {
        for a in self.data.iter_mut() {
            *a = *a * factor;
        }
    }

    /// Converts element precision.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| U::from_lit(x.as_f64())).collect(),
        }
    }
}

/// Lifts an `f64` constant into the working precision.
#[inline]
pub fn lit<T: Scalar>(x: f64) -> T {
    T::from_lit(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_length_mismatch() {
        assert!(Tensor::<f64>::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::<f64>::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn shape_invariant_holds() {
        let t = Tensor::<f32>::zeros(&[3, 4, 5]);
        assert_eq!(t.shape().iter().product::<usize>(), t.len());
    }

    #[test]
    fn scalar_roundtrip() {
        let t = Tensor::scalar(2.5f64);
        assert!(t.is_scalar());
        assert_eq!(t.item(), 2.5);
        assert_eq!(t.rank(), 0);
    }

    #[test]
    fn fixed_order_sum_is_deterministic() {
        let data: Vec<f32> = (0..1000).map(|i| (i as f32) * 1e-3).collect();
        let t = Tensor::new(vec![1000], data).unwrap();
        assert_eq!(t.sum().to_bits(), t.sum().to_bits());
    }
}
