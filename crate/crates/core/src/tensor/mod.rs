//! Dense row-major tensors.

mod element;
pub mod kernels;

use std::fmt;
use std::sync::Arc;

pub use element::{DType, Element};

use crate::error::{Error, Result};

/// Immutable dense tensor. Cloning shares the underlying buffer.
#[derive(Clone, PartialEq)]
pub struct Tensor<E> {
    shape: Vec<usize>,
    data: Arc<Vec<E>>,
}

impl<E: Element> Tensor<E> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<E>) -> Result<Self> {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape("tensor", format!("shape {shape:?} needs {n} scalars, got {}", data.len())));
        }
        Ok(Self { shape, data: Arc::new(data) })
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<E>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data: Arc::new(data) }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: E) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self::from_parts(shape, vec![value; n])
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, E::zero())
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, E::one())
    }

    pub fn scalar(value: E) -> Self {
        Self::from_parts(vec![], vec![value])
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, f: impl FnMut(usize) -> E) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self::from_parts(shape, (0..n).map(f).collect())
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

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<E> {
        self.data.as_ref().clone()
    }

    pub fn into_vec(self) -> Vec<E> {
        Arc::try_unwrap(self.data).unwrap_or_else(|a| a.as_ref().clone())
    }

    pub fn dtype(&self) -> DType {
        E::DTYPE
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> E {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    /// Same buffer, new shape.
    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.numel() {
            return Err(Error::shape("reshape", format!("cannot view {:?} as {shape:?}", self.shape)));
        }
        Ok(Self { shape, data: Arc::clone(&self.data) })
    }

    pub fn map(&self, f: impl Fn(E) -> E) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&x| f(x)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(E, E) -> E) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape("zip_map", format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(Self::from_parts(
            self.shape.clone(),
            self.data.iter().zip(other.data.iter()).map(|(&a, &b)| f(a, b)).collect(),
        ))
    }

    pub fn sum(&self) -> E {
        self.data.iter().fold(E::zero(), |acc, &x| acc + x)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> E {
        assert_eq!(self.shape, other.shape);
        self.data.iter().zip(other.data.iter()).fold(E::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn cast<F: Element>(&self) -> Tensor<F> {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&x| F::from_f64(x.to_f64())).collect())
    }

    /// Dimensions of a rank-4 tensor as `(n, c, h, w)`.
    pub fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        match *self.shape.as_slice() {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::shape(op, format!("expected rank-4 NCHW, got {:?}", self.shape))),
        }
    }

    /// Dimensions of a rank-2 tensor as `(rows, cols)`.
    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match *self.shape.as_slice() {
            [r, c] => Ok((r, c)),
            _ => Err(Error::shape(op, format!("expected rank-2, got {:?}", self.shape))),
        }
    }
}

impl<E: Element> fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<_> = self.data.iter().take(8).collect();
        write!(f, "Tensor<{}>{:?} {:?}", E::DTYPE, self.shape, preview)?;
        if self.numel() > 8 {
            write!(f, "..")?;
        }
        Ok(())
    }
}
