//! Batch normalization over channel-first 3D feature maps.
//!
//! Statistics are per channel over every voxel of every sample in the batch.
//! Running variance uses the biased estimator, so a momentum-1 update makes
//! inference reproduce the training-mode output on the same batch.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchNormConfig {
    pub eps: f64,
    pub momentum: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            momentum: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Infer,
}

/// Running statistics, mutated by training-mode passes.
#[derive(Debug)]
pub struct RunningStats<'a, T> {
    pub mean: &'a mut [T],
    pub var: &'a mut [T],
    /// Number of training batches folded in so far.
    pub count: &'a mut T,
}

/// Saved state for [`batch_norm3d_backward`].
#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    x_hat: Vec<Tensor<T>>,
    inv_std: Vec<T>,
}

fn check_batch<T: Real>(batch: &[Tensor<T>], gamma: &[T], beta: &[T]) -> Result<(usize, usize)> {
    let first = batch.first().ok_or_else(|| Error::InvalidShape("empty batch".into()))?;
    let (c, d, h, w) = first.dims4()?;
    for t in batch {
        first.check_same_shape(t)?;
    }
    for p in [gamma.len(), beta.len()] {
        if p != c {
            return Err(Error::ShapeMismatch {
                axis: "channel",
                expected: c,
                actual: p,
            });
        }
    }
    Ok((c, d * h * w))
}

/// Training-mode batch norm: normalizes with batch statistics and folds
/// them into `running` by exponential moving average.
pub fn batch_norm3d_train<T: Real>(
    batch: &[Tensor<T>],
    gamma: &[T],
    beta: &[T],
    running: RunningStats<'_, T>,
    cfg: &BatchNormConfig,
) -> Result<(Vec<Tensor<T>>, BatchNormCache<T>)> {
    let (c, per) = check_batch(batch, gamma, beta)?;
    let n = T::of((per * batch.len()) as f64);
    let eps = T::of(cfg.eps);
    let mom = T::of(cfg.momentum);
    let mut outputs: Vec<Tensor<T>> = batch.iter().map(|t| Tensor::zeros(t.shape())).collect();
    let mut x_hat: Vec<Tensor<T>> = outputs.clone();
    let mut inv_std = vec![T::zero(); c];
    for ch in 0..c {
        let mut mean = batch.iter().map(|t| t.channel(ch).iter().copied().sum::<T>()).sum::<T>() / n;
        // One correction pass keeps constant channels exactly centred.
        mean += batch
            .iter()
            .map(|t| t.channel(ch).iter().map(|&v| v - mean).sum::<T>())
            .sum::<T>()
            / n;
        let var = batch
            .iter()
            .map(|t| t.channel(ch).iter().map(|&v| (v - mean) * (v - mean)).sum::<T>())
            .sum::<T>()
            / n;
        let istd = T::one() / (var + eps).sqrt();
        inv_std[ch] = istd;
        for ((t, o), xh) in batch.iter().zip(outputs.iter_mut()).zip(x_hat.iter_mut()) {
            let src = t.channel(ch);
            let xh = xh.channel_mut(ch);
            for (dst, &v) in xh.iter_mut().zip(src) {
                *dst = (v - mean) * istd;
            }
            for (dst, &v) in o.channel_mut(ch).iter_mut().zip(xh.iter()) {
                *dst = gamma[ch] * v + beta[ch];
            }
        }
        running.mean[ch] = (T::one() - mom) * running.mean[ch] + mom * mean;
        running.var[ch] = (T::one() - mom) * running.var[ch] + mom * var;
    }
    *running.count += T::one();
    Ok((outputs, BatchNormCache { x_hat, inv_std }))
}

/// Inference-mode batch norm with accumulated running statistics.
pub fn batch_norm3d_infer<T: Real>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
    count: T,
    cfg: &BatchNormConfig,
) -> Result<Tensor<T>> {
    let (c, _) = check_batch(core::slice::from_ref(x), gamma, beta)?;
    if count <= T::zero() {
        return Err(Error::MissingRunningStats);
    }
    let eps = T::of(cfg.eps);
    let mut out = x.clone();
    for ch in 0..c {
        let istd = T::one() / (running_var[ch] + eps).sqrt();
        let (m, g, b) = (running_mean[ch], gamma[ch], beta[ch]);
        out.channel_mut(ch)
            .iter_mut()
            .for_each(|v| *v = g * ((*v - m) * istd) + b);
    }
    Ok(out)
}

/// Backward of [`batch_norm3d_train`]; accumulates `gamma`/`beta` gradients.
pub fn batch_norm3d_backward<T: Real>(
    cache: &BatchNormCache<T>,
    gamma: &[T],
    grad_out: &[Tensor<T>],
    grad_gamma: &mut [T],
    grad_beta: &mut [T],
) -> Result<Vec<Tensor<T>>> {
    if grad_out.len() != cache.x_hat.len() {
        return Err(Error::ShapeMismatch {
            axis: "batch",
            expected: cache.x_hat.len(),
            actual: grad_out.len(),
        });
    }
    let c = cache.inv_std.len();
    let per = cache.x_hat[0].len() / c;
    let n = T::of((per * grad_out.len()) as f64);
    let mut grads: Vec<Tensor<T>> = grad_out.iter().map(|g| Tensor::zeros(g.shape())).collect();
    for ch in 0..c {
        let mut sum_g = T::zero();
        let mut sum_gx = T::zero();
        for (g, xh) in grad_out.iter().zip(&cache.x_hat) {
            for (&gv, &xv) in g.channel(ch).iter().zip(xh.channel(ch)) {
                sum_g += gv;
                sum_gx += gv * xv;
            }
        }
        grad_beta[ch] += sum_g;
        grad_gamma[ch] += sum_gx;
        let mean_g = sum_g / n;
        let mean_gx = sum_gx / n;
        let scale = gamma[ch] * cache.inv_std[ch];
        for ((dst, g), xh) in grads.iter_mut().zip(grad_out).zip(&cache.x_hat) {
            for ((d, &gv), &xv) in dst.channel_mut(ch).iter_mut().zip(g.channel(ch)).zip(xh.channel(ch)) {
                *d = scale * (gv - mean_g - xv * mean_gx);
            }
        }
    }
    Ok(grads)
}
