//! Voxelwise regression losses.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Mean squared error, used for the denoising stage.
    Mse,
    /// Mean absolute error, used for the inversion stage.
    Mae,
}

impl LossKind {
    pub fn value<T: Real>(self, pred: &Tensor<T>, truth: &Tensor<T>) -> Result<T> {
        match self {
            LossKind::Mse => loss_mse(pred, truth),
            LossKind::Mae => loss_mae(pred, truth),
        }
    }

    /// Loss value and its gradient with respect to `pred`.
    pub fn value_and_grad<T: Real>(self, pred: &Tensor<T>, truth: &Tensor<T>) -> Result<(T, Tensor<T>)> {
        pred.check_same_shape(truth)?;
        let n = T::of(pred.len() as f64);
        let grad = Tensor::from_fn(pred.shape(), |i| {
            let d = pred.data()[i] - truth.data()[i];
            match self {
                LossKind::Mse => (d + d) / n,
                LossKind::Mae => {
                    if d > T::zero() {
                        T::one() / n
                    } else if d < T::zero() {
                        -T::one() / n
                    } else {
                        T::zero()
                    }
                }
            }
        });
        Ok((self.value(pred, truth)?, grad))
    }
}

pub fn loss_mse<T: Real>(pred: &Tensor<T>, truth: &Tensor<T>) -> Result<T> {
    pred.check_same_shape(truth)?;
    let s: T = pred.data().iter().zip(truth.data()).map(|(&a, &b)| (a - b) * (a - b)).sum();
    Ok(s / T::of(pred.len() as f64))
}

pub fn loss_mae<T: Real>(pred: &Tensor<T>, truth: &Tensor<T>) -> Result<T> {
    pred.check_same_shape(truth)?;
    let s: T = pred.data().iter().zip(truth.data()).map(|(&a, &b)| (a - b).abs()).sum();
    Ok(s / T::of(pred.len() as f64))
}
