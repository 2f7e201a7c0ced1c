//! Dense row-major tensors over `f64` and `Complex64`.

use std::ops::{Index, IndexMut};

pub use num_complex::Complex64;

use crate::error::{Error, Result};

/// Element types a [`Tensor`] can hold.
pub trait Element: Copy + Default + PartialEq + std::fmt::Debug + Send + Sync + 'static {
    /// Dtype code used by the MRT1 file format.
    const DTYPE: DType;
}

impl Element for f64 {
    const DTYPE: DType = DType::Real64;
}

impl Element for Complex64 {
    const DTYPE: DType = DType::Complex128;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    Real64 = 0,
    Complex128 = 1,
}

impl DType {
    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::Real64),
            1 => Some(DType::Complex128),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    /// Bytes per element in the serialized payload.
    pub fn width(self) -> usize {
        match self {
            DType::Real64 => 8,
            DType::Complex128 => 16,
        }
    }
}

/// A dense N-dimensional array. Dimensions are fixed at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f64> {
    dims: Vec<usize>,
    data: Vec<T>,
}

pub type CTensor = Tensor<Complex64>;

impl<T: Element> Tensor<T> {
    pub fn new(dims: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::InvalidShape(format!(
                "dims {dims:?} need {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self {
            dims: dims.to_vec(),
            data: vec![T::default(); dims.iter().product()],
        }
    }

    pub fn full(dims: &[usize], value: T) -> Self {
        Self {
            dims: dims.to_vec(),
            data: vec![value; dims.iter().product()],
        }
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n: usize = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dtype(&self) -> DType {
        T::DTYPE
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

    /// Reinterprets the same payload under new dimensions.
    pub fn reshape(self, dims: Vec<usize>) -> Result<Self> {
        Self::new(dims, self.data)
    }

    pub fn map<U: Element>(&self, mut f: impl FnMut(T) -> U) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_dims(other.dims())?;
        Ok(Tensor {
            dims: self.dims.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Returns `(rows, cols)` for a 2-D tensor.
    pub fn shape2(&self) -> Result<(usize, usize)> {
        match self.dims[..] {
            [h, w] => Ok((h, w)),
            _ => Err(Error::InvalidShape(format!(
                "expected a 2-D tensor, got dims {:?}",
                self.dims
            ))),
        }
    }

    /// Returns `(n, c, h, w)` for a 4-D tensor.
    pub fn shape4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.dims[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::InvalidShape(format!(
                "expected an N×C×H×W tensor, got dims {:?}",
                self.dims
            ))),
        }
    }

    pub fn expect_dims(&self, dims: &[usize]) -> Result<()> {
        if self.dims != dims {
            return Err(Error::InvalidShape(format!(
                "expected dims {dims:?}, got {:?}",
                self.dims
            )));
        }
        Ok(())
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.dims.len(), "index rank mismatch");
        index.iter().zip(&self.dims).fold(0, |acc, (&i, &d)| {
            assert!(i < d, "index {index:?} out of bounds for {:?}", self.dims);
            acc * d + i
        })
    }
}

impl Tensor<f64> {
    pub fn scale(&self, k: f64) -> Self {
        self.map(|v| v * k)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn to_complex(&self) -> CTensor {
        self.map(|v| Complex64::new(v, 0.0))
    }

    /// Mean squared difference against another tensor of the same shape.
    pub fn mse(&self, other: &Self) -> Result<f64> {
        self.expect_dims(other.dims())?;
        let n = self.len().max(1) as f64;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n)
    }
}

impl CTensor {
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// Element-wise modulus of a complex tensor.
pub fn magnitude(t: &CTensor) -> Tensor<f64> {
    t.map(|z| z.norm())
}

impl<T: Element> Index<&[usize]> for Tensor<T> {
    type Output = T;

    fn index(&self, index: &[usize]) -> &T {
        &self.data[self.offset(index)]
    }
}

impl<T: Element> IndexMut<&[usize]> for Tensor<T> {
    fn index_mut(&mut self, index: &[usize]) -> &mut T {
        let o = self.offset(index);
        &mut self.data[o]
    }
}

impl<T: Element, const N: usize> Index<[usize; N]> for Tensor<T> {
    type Output = T;

    fn index(&self, index: [usize; N]) -> &T {
        &self.data[self.offset(&index)]
    }
}

impl<T: Element, const N: usize> IndexMut<[usize; N]> for Tensor<T> {
    fn index_mut(&mut self, index: [usize; N]) -> &mut T {
        let o = self.offset(&index);
        &mut self.data[o]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatched_length() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn row_major_indexing() {
        let t = Tensor::from_fn(&[2, 3, 4], |i| i as f64);
        assert_eq!(t[[1, 2, 3]], 23.0);
        assert_eq!(t[[0, 1, 0]], 4.0);
    }

    #[test]
    fn magnitude_of_pythagorean_triple() {
        let t = CTensor::new(
            vec![2],
            vec![Complex64::new(3.0, 4.0), Complex64::new(0.0, 0.0)],
        )
        .unwrap();
        let m = magnitude(&t);
        assert_eq!(m.data(), &[5.0, 0.0]);
    }
}
