//! Adam and the conditional learning-rate decay.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamKind, ParamStore};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Completed steps.
    pub t: u64,
    /// First and second moments, one vector per store entry (empty for
    /// buffers).
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros: Vec<Vec<T>> = params
            .entries()
            .iter()
            .map(|e| match e.kind {
                ParamKind::Trainable => alloc::vec![T::zero(); e.tensor.len()],
                ParamKind::Buffer => Vec::new(),
            })
            .collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn check_compatible(&self, params: &ParamStore<T>) -> Result<()> {
        let ok = self.m.len() == params.len()
            && self.v.len() == params.len()
            && params.entries().iter().zip(self.m.iter().zip(&self.v)).all(|(e, (m, v))| {
                let n = if e.kind == ParamKind::Trainable { e.tensor.len() } else { 0 };
                m.len() == n && v.len() == n
            });
        if ok {
            Ok(())
        } else {
            Err(Error::ArchitectureMismatch("optimizer state does not match parameters".into()))
        }
    }

    /// One bias-corrected Adam update from the gradients accumulated in
    /// `params`. Parameters without a gradient buffer see a zero gradient.
    pub fn step(&mut self, params: &mut ParamStore<T>, lr: f64) -> Result<()> {
        self.check_compatible(params)?;
        for e in params.entries() {
            if let Some(g) = &e.tensor.grad {
                if e.kind == ParamKind::Trainable && !g.iter().all(|x| x.is_finite()) {
                    return Err(Error::NonFinite(format!("gradient of {} is not finite", e.name)));
                }
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::of(1.0 - libm::pow(self.beta1, t as f64));
        let c2 = T::of(1.0 - libm::pow(self.beta2, t as f64));
        let (lr, eps) = (T::of(lr), T::of(self.eps));
        let one = T::one();
        for ((e, m), v) in params.entries_mut().iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if e.kind != ParamKind::Trainable {
                continue;
            }
            let tensor = &mut e.tensor;
            let grad = tensor.grad.take();
            for (i, x) in tensor.data.iter_mut().enumerate() {
                let g = grad.as_ref().map_or(T::zero(), |g| g[i]);
                m[i] = b1 * m[i] + (one - b1) * g;
                v[i] = b2 * v[i] + (one - b2) * g * g;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                *x -= lr * mh / (vh.sqrt() + eps);
            }
            tensor.grad = grad;
        }
        Ok(())
    }
}

/// Learning rate for the next epoch: decays by `factor` when the last
/// epoch's training loss did not drop below the previous one.
pub fn update_lr(lr: f64, history: &[f64], factor: f64) -> f64 {
    match history {
        [.., prev, last] if last >= prev => lr * factor,
        _ => lr,
    }
}
