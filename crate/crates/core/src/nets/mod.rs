//! The denoising and inversion networks.

pub mod denoiser;
pub mod inverter;
pub mod layers;

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Real;
use crate::tensor::Tensor;

pub use denoiser::{Denoiser, DenoiserConfig};
pub use inverter::{receptive_field, Inverter, InverterConfig};
pub use layers::{LayerKind, LayerSpec};

/// Architecture tag stored alongside parameters in checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "network", rename_all = "snake_case")]
pub enum Architecture {
    Denoiser(DenoiserConfig),
    Inverter(InverterConfig),
}

/// A trainable network mapping `D×H×W` volumes to `D×H×W` volumes.
pub trait Network<T: Real> {
    type Cache;

    fn architecture(&self) -> Architecture;
    fn layers(&self) -> &[LayerSpec];
    fn params(&self) -> &ParamStore<T>;
    fn params_mut(&mut self) -> &mut ParamStore<T>;

    /// Training-mode forward pass over a batch, keeping what backward needs.
    fn forward_train(&mut self, batch: &[Tensor<T>]) -> Result<(Vec<Tensor<T>>, Self::Cache)>;

    /// Accumulates parameter gradients; returns input gradients when asked.
    fn backward(
        &mut self,
        cache: Self::Cache,
        grad_out: &[Tensor<T>],
        want_input: bool,
    ) -> Result<Option<Vec<Tensor<T>>>>;

    /// Inference-mode forward pass of a single volume.
    fn forward_infer(&self, input: &Tensor<T>) -> Result<Tensor<T>>;
}

/// Sum of all trainable scalars.
pub fn count_parameters<T: Real, N: Network<T> + ?Sized>(net: &N) -> usize {
    net.params().count_trainable()
}

pub(crate) fn to_feature_map<T: Real>(volume: &Tensor<T>) -> Result<Tensor<T>> {
    let (d, h, w) = volume.dims3()?;
    volume.clone().reshape(&[1, d, h, w])
}

pub(crate) fn to_volume<T: Real>(map: Tensor<T>) -> Result<Tensor<T>> {
    let (c, d, h, w) = map.dims4()?;
    if c != 1 {
        return Err(Error::ShapeMismatch {
            axis: "channel",
            expected: 1,
            actual: c,
        });
    }
    map.reshape(&[d, h, w])
}

pub(crate) fn check_finite<T: Real>(volume: &Tensor<T>) -> Result<()> {
    if volume.all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite("input volume contains NaN or infinity".into()))
    }
}
