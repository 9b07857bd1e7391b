//! Correlated random clutter standing in for heterogeneous-soil returns.

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Clutter presets. Each pairs a correlation structure with the background
/// permittivity written into ground-truth maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClutterFamily {
    /// Clutter added on top of a homogeneous-soil simulation.
    Homogeneous,
    /// Sandy-clay mixture, background 5.72.
    Mixed,
    /// Wetter clay-loam mixture with finer texture, background 6.34.
    Wet,
}

impl ClutterFamily {
    /// Correlation lengths in samples along `[time, line, trace]`.
    pub fn correlation(self) -> [f64; 3] {
        match self {
            ClutterFamily::Homogeneous => [4.0, 2.0, 2.0],
            ClutterFamily::Mixed => [6.0, 3.0, 3.0],
            ClutterFamily::Wet => [3.0, 1.5, 1.5],
        }
    }

    pub fn background_epsilon_r(self) -> f64 {
        match self {
            ClutterFamily::Homogeneous => 4.0,
            ClutterFamily::Mixed => 5.72,
            ClutterFamily::Wet => 6.34,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClutterParams {
    pub family: ClutterFamily,
    /// Clutter RMS over reference RMS.
    pub amplitude_ratio: f64,
    pub correlation: [f64; 3],
    pub background_epsilon_r: f64,
    pub seed: u64,
}

impl ClutterParams {
    pub fn preset(family: ClutterFamily, amplitude_ratio: f64, seed: u64) -> Self {
        Self {
            family,
            amplitude_ratio,
            correlation: family.correlation(),
            background_epsilon_r: family.background_epsilon_r(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude_ratio >= 0.0 && self.amplitude_ratio.is_finite()) {
            return Err(Error::InvalidConfig("clutter.amplitude_ratio must be >= 0".into()));
        }
        if self.correlation.iter().any(|&c| !(c >= 0.0 && c.is_finite())) {
            return Err(Error::InvalidConfig("clutter.correlation must be >= 0".into()));
        }
        if !(self.background_epsilon_r >= 1.0) {
            return Err(Error::InvalidConfig("clutter.background_epsilon_r must be >= 1".into()));
        }
        Ok(())
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let r = libm::ceil(3.0 * sigma) as i64;
    let mut k: Vec<f64> = (-r..=r).map(|i| libm::exp(-((i * i) as f64) / (2.0 * sigma * sigma))).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Valid-mode convolution of `field` (extents `dims`) along `axis`.
fn smooth_axis(field: &[f64], dims: [usize; 3], axis: usize, kernel: &[f64]) -> (Vec<f64>, [usize; 3]) {
    let mut out_dims = dims;
    out_dims[axis] = dims[axis] + 1 - kernel.len();
    let strides = [dims[1] * dims[2], dims[2], 1];
    let mut out = Vec::with_capacity(out_dims.iter().product());
    for a in 0..out_dims[0] {
        for b in 0..out_dims[1] {
            for c in 0..out_dims[2] {
                let base = a * strides[0] + b * strides[1] + c * strides[2];
                out.push(kernel.iter().enumerate().map(|(j, &w)| w * field[base + j * strides[axis]]).sum());
            }
        }
    }
    (out, out_dims)
}

/// White Gaussian noise smoothed by a separable Gaussian with standard
/// deviations `params.correlation`, centred and scaled so its RMS equals
/// `amplitude_ratio * reference_rms`.
pub fn synthesize_clutter(params: &ClutterParams, dims: [usize; 3], reference_rms: f64) -> Result<Tensor<f64>> {
    params.validate()?;
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::InvalidShape("clutter dims must be positive".into()));
    }
    let target = params.amplitude_ratio * reference_rms;
    if !(target > 0.0) {
        return Ok(Tensor::zeros(&dims));
    }
    let kernels: Vec<Vec<f64>> = params.correlation.iter().map(|&s| gaussian_kernel(s)).collect();
    let mut padded = dims;
    for (p, k) in padded.iter_mut().zip(&kernels) {
        *p += k.len() - 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut field: Vec<f64> = (0..padded.iter().product::<usize>()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut cur = padded;
    for (axis, k) in kernels.iter().enumerate() {
        let (f, d) = smooth_axis(&field, cur, axis, k);
        field = f;
        cur = d;
    }
    let n = field.len() as f64;
    let mean = field.iter().sum::<f64>() / n;
    field.iter_mut().for_each(|v| *v -= mean);
    let rms = libm::sqrt(field.iter().map(|v| v * v).sum::<f64>() / n);
    if rms == 0.0 {
        return Ok(Tensor::zeros(&dims));
    }
    let scale = target / rms;
    field.iter_mut().for_each(|v| *v *= scale);
    Tensor::from_vec(&dims, field)
}

pub fn rms(t: &Tensor<f64>) -> f64 {
    if t.is_empty() {
        return 0.0;
    }
    libm::sqrt(t.data().iter().map(|v| v * v).sum::<f64>() / t.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_ratio_is_silent() {
        let p = ClutterParams::preset(ClutterFamily::Homogeneous, 0.0, 1);
        let c = synthesize_clutter(&p, [8, 4, 4], 1.0).unwrap();
        assert!(c.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_and_scaled() {
        let p = ClutterParams::preset(ClutterFamily::Mixed, 0.5, 42);
        let a = synthesize_clutter(&p, [16, 8, 8], 2.0).unwrap();
        let b = synthesize_clutter(&p, [16, 8, 8], 2.0).unwrap();
        assert_eq!(a, b);
        assert!((rms(&a) - 1.0).abs() < 0.01);
    }

    #[test]
    fn neighbours_are_correlated() {
        let p = ClutterParams::preset(ClutterFamily::Homogeneous, 1.0, 3);
        let c = synthesize_clutter(&p, [32, 8, 8], 1.0).unwrap();
        let d = c.data();
        let stride = 64;
        let lag1: f64 = (0..31 * stride).map(|i| d[i] * d[i + stride]).sum::<f64>() / (31 * stride) as f64;
        assert!(lag1 > 0.5, "{lag1}");
    }
}
