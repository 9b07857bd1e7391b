//! Dense row-major tensors.
//!
//! Feature maps are channel-first (`C×D×H×W`) and single volumes are
//! `D×H×W`. The slowest-varying dimension comes first in `data`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    pub(crate) data: Vec<T>,
    /// Gradient companion, same length as `data` when present.
    #[serde(skip)]
    pub grad: Option<Vec<T>>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
            grad: None,
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::InvalidShape(format!(
                "shape {:?} holds {} values but {} were given",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
            grad: None,
        })
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
            grad: None,
        }
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// `(C, D, H, W)` of a channel-first feature map.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match *self.shape.as_slice() {
            [c, d, h, w] => Ok((c, d, h, w)),
            _ => Err(Error::InvalidShape(format!(
                "expected a C×D×H×W tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    /// `(D, H, W)` of a single-channel volume.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match *self.shape.as_slice() {
            [d, h, w] => Ok((d, h, w)),
            _ => Err(Error::InvalidShape(format!(
                "expected a D×H×W volume, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::InvalidShape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape.to_vec();
        if let Some(g) = &self.grad {
            debug_assert_eq!(g.len(), n);
        }
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
            grad: None,
        }
    }

    /// Converts the element type, dropping any gradient.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| U::of(x.as_f64())).collect(),
            grad: None,
        }
    }

    pub fn scale(&self, alpha: T) -> Self {
        self.map(|x| x * alpha)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a + b)
                .collect(),
            grad: None,
        })
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape.len() != other.shape.len() {
            return Err(Error::ShapeMismatch {
                axis: "rank",
                expected: self.shape.len(),
                actual: other.shape.len(),
            });
        }
        for (i, (&a, &b)) in self.shape.iter().zip(&other.shape).enumerate() {
            if a != b {
                return Err(Error::ShapeMismatch {
                    axis: axis_name(self.shape.len(), i),
                    expected: a,
                    actual: b,
                });
            }
        }
        Ok(())
    }

    /// Gradient buffer, allocated as zeros on first access.
    pub fn grad_mut(&mut self) -> &mut [T] {
        let n = self.data.len();
        self.grad.get_or_insert_with(|| vec![T::zero(); n])
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|x| *x = T::zero());
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn min_max(&self) -> Option<(T, T)> {
        let mut it = self.data.iter().copied();
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), x| (lo.min(x), hi.max(x))))
    }

    /// Channel `c` of a `C×...` tensor as a slice.
    pub fn channel(&self, c: usize) -> &[T] {
        let per = self.data.len() / self.shape[0];
        &self.data[c * per..(c + 1) * per]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        let per = self.data.len() / self.shape[0];
        &mut self.data[c * per..(c + 1) * per]
    }
}

/// Name of axis `i` for error messages, assuming channel-first layout.
pub(crate) fn axis_name(rank: usize, i: usize) -> &'static str {
    const FOUR: [&str; 4] = ["channel", "depth", "height", "width"];
    const THREE: [&str; 3] = ["depth", "height", "width"];
    match rank {
        4 => FOUR[i],
        3 => THREE[i],
        _ => "axis",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::<f64>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::<f64>::from_vec(&[2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.len(), 6);
    }

    #[test]
    fn grad_has_identical_shape() {
        let mut t = Tensor::<f32>::zeros(&[2, 2, 2, 2]);
        assert_eq!(t.grad_mut().len(), t.len());
    }

    #[test]
    fn shape_mismatch_names_axis() {
        let a = Tensor::<f64>::zeros(&[1, 2, 3, 4]);
        let b = Tensor::<f64>::zeros(&[1, 2, 5, 4]);
        match a.add(&b) {
            Err(Error::ShapeMismatch { axis, .. }) => assert_eq!(axis, "height"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
