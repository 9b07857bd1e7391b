//! Parameterized layers bound to a [`ParamStore`].

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use alloc::{format, vec};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::ops::conv::{conv3d, conv3d_backward, transposed_conv3d, transposed_conv3d_backward, ConvGeometry};
use crate::ops::linear::{fully_connected, fully_connected_backward};
use crate::ops::norm::{
    batch_norm3d_backward, batch_norm3d_infer, batch_norm3d_train, BatchNormCache, BatchNormConfig, RunningStats,
};
use crate::params::{uniform_fan_in, ParamId, ParamKind, ParamStore};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Kind of one node in a network graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Conv3d,
    TransposedConv3d,
    MaxPool,
    GlobalAvgPool,
    FullyConnected,
    BatchNorm,
    Relu,
    Sigmoid,
    Linear,
    Concat,
    ResidualAdd,
    Rescale,
}

/// One entry of a network's ordered layer list, used for audits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind, in_channels: usize, out_channels: usize) -> Self {
        Self {
            name: name.into(),
            kind,
            in_channels,
            out_channels,
        }
    }
}

/// Takes the gradient buffer out of a parameter (allocating zeros).
fn take_grad<T: Real>(ps: &mut ParamStore<T>, id: ParamId) -> Vec<T> {
    let t = ps.get_mut(id);
    let n = t.len();
    t.grad.take().unwrap_or_else(|| vec![T::zero(); n])
}

fn put_grad<T: Real>(ps: &mut ParamStore<T>, id: ParamId, g: Vec<T>) {
    ps.get_mut(id).grad = Some(g);
}

#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub geometry: ConvGeometry,
    pub transposed: bool,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Conv {
    /// Registers `{name}.weight` (`C_out×C_in×k×k×k`) and `{name}.bias`.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        ps: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        geometry: ConvGeometry,
        transposed: bool,
    ) -> Result<Self> {
        let fan_in = in_channels * kernel * kernel * kernel;
        let w = uniform_fan_in(rng, &[out_channels, in_channels, kernel, kernel, kernel], fan_in);
        let weight = ps.register(&format!("{name}.weight"), ParamKind::Trainable, w)?;
        let bias = ps.register(&format!("{name}.bias"), ParamKind::Trainable, Tensor::zeros(&[out_channels]))?;
        Ok(Self {
            weight,
            bias,
            geometry,
            transposed,
            in_channels,
            out_channels,
        })
    }

    pub fn forward<T: Real>(&self, ps: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        if self.transposed {
            transposed_conv3d(x, ps.get(self.weight), ps.get(self.bias), &self.geometry)
        } else {
            conv3d(x, ps.get(self.weight), ps.get(self.bias), &self.geometry)
        }
    }

    pub fn backward<T: Real>(
        &self,
        ps: &mut ParamStore<T>,
        x: &Tensor<T>,
        grad_out: &Tensor<T>,
        want_input: bool,
    ) -> Result<Option<Tensor<T>>> {
        let mut gw = take_grad(ps, self.weight);
        let mut gb = take_grad(ps, self.bias);
        let res = if self.transposed {
            transposed_conv3d_backward(x, ps.get(self.weight), &self.geometry, grad_out, &mut gw, &mut gb, want_input)
        } else {
            conv3d_backward(x, ps.get(self.weight), &self.geometry, grad_out, &mut gw, &mut gb, want_input)
        };
        put_grad(ps, self.weight, gw);
        put_grad(ps, self.bias, gb);
        res
    }
}

#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn new<T: Real, R: Rng + ?Sized>(
        ps: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        in_features: usize,
        out_features: usize,
    ) -> Result<Self> {
        let w = uniform_fan_in(rng, &[out_features, in_features], in_features);
        let weight = ps.register(&format!("{name}.weight"), ParamKind::Trainable, w)?;
        let bias = ps.register(&format!("{name}.bias"), ParamKind::Trainable, Tensor::zeros(&[out_features]))?;
        Ok(Self { weight, bias })
    }

    pub fn forward<T: Real>(&self, ps: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        fully_connected(x, ps.get(self.weight), ps.get(self.bias))
    }

    pub fn backward<T: Real>(&self, ps: &mut ParamStore<T>, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let mut gw = take_grad(ps, self.weight);
        let mut gb = take_grad(ps, self.bias);
        let res = fully_connected_backward(x, ps.get(self.weight), grad_out, &mut gw, &mut gb);
        put_grad(ps, self.weight, gw);
        put_grad(ps, self.bias, gb);
        res
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub tracked: ParamId,
    pub cfg: BatchNormConfig,
}

impl BatchNorm {
    pub fn new<T: Real>(ps: &mut ParamStore<T>, name: &str, channels: usize, cfg: BatchNormConfig) -> Result<Self> {
        Ok(Self {
            gamma: ps.register(&format!("{name}.gamma"), ParamKind::Trainable, Tensor::full(&[channels], T::one()))?,
            beta: ps.register(&format!("{name}.beta"), ParamKind::Trainable, Tensor::zeros(&[channels]))?,
            running_mean: ps.register(&format!("{name}.running_mean"), ParamKind::Buffer, Tensor::zeros(&[channels]))?,
            running_var: ps.register(
                &format!("{name}.running_var"),
                ParamKind::Buffer,
                Tensor::full(&[channels], T::one()),
            )?,
            tracked: ps.register(&format!("{name}.batches_tracked"), ParamKind::Buffer, Tensor::zeros(&[1]))?,
            cfg,
        })
    }

    pub fn forward_train<T: Real>(
        &self,
        ps: &mut ParamStore<T>,
        batch: &[Tensor<T>],
    ) -> Result<(Vec<Tensor<T>>, BatchNormCache<T>)> {
        let mut mean = ps.get(self.running_mean).data().to_vec();
        let mut var = ps.get(self.running_var).data().to_vec();
        let mut count = ps.get(self.tracked).data()[0];
        let res = batch_norm3d_train(
            batch,
            ps.get(self.gamma).data(),
            ps.get(self.beta).data(),
            RunningStats {
                mean: &mut mean,
                var: &mut var,
                count: &mut count,
            },
            &self.cfg,
        )?;
        ps.get_mut(self.running_mean).data_mut().copy_from_slice(&mean);
        ps.get_mut(self.running_var).data_mut().copy_from_slice(&var);
        ps.get_mut(self.tracked).data_mut()[0] = count;
        Ok(res)
    }

    pub fn forward_infer<T: Real>(&self, ps: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        batch_norm3d_infer(
            x,
            ps.get(self.gamma).data(),
            ps.get(self.beta).data(),
            ps.get(self.running_mean).data(),
            ps.get(self.running_var).data(),
            ps.get(self.tracked).data()[0],
            &self.cfg,
        )
    }

    pub fn backward<T: Real>(
        &self,
        ps: &mut ParamStore<T>,
        cache: &BatchNormCache<T>,
        grad_out: &[Tensor<T>],
    ) -> Result<Vec<Tensor<T>>> {
        let mut gg = take_grad(ps, self.gamma);
        let mut gb = take_grad(ps, self.beta);
        let res = batch_norm3d_backward(cache, ps.get(self.gamma).data(), grad_out, &mut gg, &mut gb);
        put_grad(ps, self.gamma, gg);
        put_grad(ps, self.beta, gb);
        res
    }
}

pub(crate) fn layer_name(prefix: &str, leaf: &str) -> String {
    if prefix.is_empty() {
        leaf.to_string()
    } else {
        format!("{prefix}.{leaf}")
    }
}
