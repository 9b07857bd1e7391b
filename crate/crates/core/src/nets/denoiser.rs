//! Residual denoiser with channel attention.
//!
//! ```text
//! F0   = relu(conv(Y))                         1 -> C
//! Fm   = M_m(...M_1(F0))                       m feature-learning modules
//! Y_D  = relu(Y + conv(F0 + Fm))               C -> 1
//! ```
//!
//! Each feature-learning module runs two residual blocks
//! `F' = relu(conv(relu(conv(F))) + F)` and then rescales the result by a
//! squeeze-and-excitation vector `v = sigmoid(W1 relu(W2 gap(F2)))` before
//! adding the module input back.

use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{layer_name, Conv, Dense, LayerKind, LayerSpec};
use super::{check_finite, to_feature_map, to_volume, Architecture, Network};
use crate::error::{Error, Result};
use crate::ops::activation::{relu, sigmoid, Activation};
use crate::ops::conv::ConvGeometry;
use crate::ops::pool::{global_avg_pool, global_avg_pool_backward};
use crate::ops::rescale::{scale_channels, scale_channels_backward};
use crate::params::ParamStore;
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserConfig {
    /// Number of feature-learning modules.
    pub modules: usize,
    /// Channel width.
    pub channels: usize,
    /// Attention reduction ratio.
    pub reduction: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            modules: 2,
            channels: 8,
            reduction: 4,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::InvalidConfig("denoiser channels must be >= 1".into()));
        }
        if self.reduction == 0 || self.channels % self.reduction != 0 {
            return Err(Error::InvalidConfig(format!(
                "reduction ratio {} does not divide channel width {}",
                self.reduction, self.channels
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct ResidualBlock {
    first: Conv,
    second: Conv,
}

/// Intermediates of one residual block.
#[derive(Debug, Clone)]
struct ResidualCache<T> {
    input: Tensor<T>,
    hidden: Tensor<T>,
    output: Tensor<T>,
}

impl ResidualBlock {
    fn forward<T: Real>(&self, ps: &ParamStore<T>, x: &Tensor<T>) -> Result<ResidualCache<T>> {
        let mut hidden = self.first.forward(ps, x)?;
        Activation::Relu.apply_in_place(&mut hidden);
        let mut output = self.second.forward(ps, &hidden)?;
        output.add_assign(x)?;
        Activation::Relu.apply_in_place(&mut output);
        Ok(ResidualCache {
            input: x.clone(),
            hidden,
            output,
        })
    }

    fn backward<T: Real>(&self, ps: &mut ParamStore<T>, c: &ResidualCache<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let g_pre = Activation::Relu.backward(&c.output, grad);
        let mut g_hidden = self.second.backward(ps, &c.hidden, &g_pre, true)?.expect("input grad");
        Activation::Relu.backward_in_place(&c.hidden, &mut g_hidden);
        let mut g_in = self.first.backward(ps, &c.input, &g_hidden, true)?.expect("input grad");
        g_in.add_assign(&g_pre)?;
        Ok(g_in)
    }
}

#[derive(Debug, Clone)]
struct FeatureModule {
    blocks: [ResidualBlock; 2],
    squeeze: Dense,
    excite: Dense,
}

/// Intermediates of one feature-learning module.
#[derive(Debug, Clone)]
pub struct ModuleTrace<T> {
    blocks: [ResidualCache<T>; 2],
    pooled: Tensor<T>,
    squeezed: Tensor<T>,
    /// Channel attention vector, each entry in `(0, 1)`.
    pub attention: Tensor<T>,
    pub output: Tensor<T>,
}

impl FeatureModule {
    fn forward<T: Real>(&self, ps: &ParamStore<T>, x: &Tensor<T>) -> Result<ModuleTrace<T>> {
        let b0 = self.blocks[0].forward(ps, x)?;
        let b1 = self.blocks[1].forward(ps, &b0.output)?;
        let f2 = &b1.output;
        let pooled = global_avg_pool(f2)?;
        let mut squeezed = self.squeeze.forward(ps, &pooled)?;
        squeezed.data_mut().iter_mut().for_each(|v| *v = relu(*v));
        let mut attention = self.excite.forward(ps, &squeezed)?;
        attention.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
        let output = scale_channels(f2, &attention)?.add(x)?;
        Ok(ModuleTrace {
            blocks: [b0, b1],
            pooled,
            squeezed,
            attention,
            output,
        })
    }

    fn backward<T: Real>(&self, ps: &mut ParamStore<T>, t: &ModuleTrace<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let f2 = &t.blocks[1].output;
        let (mut g_f2, g_att) = scale_channels_backward(f2, &t.attention, grad)?;
        let g_u = Activation::Sigmoid.backward(&t.attention, &g_att);
        let mut g_s = self.excite.backward(ps, &t.squeezed, &g_u)?;
        Activation::Relu.backward_in_place(&t.squeezed, &mut g_s);
        let g_z = self.squeeze.backward(ps, &t.pooled, &g_s)?;
        g_f2.add_assign(&global_avg_pool_backward(f2.shape(), &g_z)?)?;
        let g_f1 = self.blocks[1].backward(ps, &t.blocks[1], &g_f2)?;
        let mut g_in = self.blocks[0].backward(ps, &t.blocks[0], &g_f1)?;
        g_in.add_assign(grad)?;
        Ok(g_in)
    }
}

#[derive(Debug, Clone)]
pub struct Denoiser<T> {
    cfg: DenoiserConfig,
    params: ParamStore<T>,
    head: Conv,
    modules: Vec<FeatureModule>,
    tail: Conv,
    layers: Vec<LayerSpec>,
}

/// Everything the backward pass needs for one sample.
#[derive(Debug, Clone)]
pub struct DenoiserTrace<T> {
    input: Tensor<T>,
    features: Tensor<T>,
    pub modules: Vec<ModuleTrace<T>>,
    merged: Tensor<T>,
    output: Tensor<T>,
}

impl<T: Real> Denoiser<T> {
    pub fn new(cfg: DenoiserConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamStore::new();
        let c = cfg.channels;
        let g = ConvGeometry::SAME3;
        let mut layers = Vec::new();
        let head = Conv::new(&mut ps, &mut rng, "head", 1, c, 3, g, false)?;
        layers.push(LayerSpec::new("head", LayerKind::Conv3d, 1, c));
        layers.push(LayerSpec::new("head.relu", LayerKind::Relu, c, c));
        let mut modules = Vec::with_capacity(cfg.modules);
        for j in 0..cfg.modules {
            let p = format!("modules.{j}");
            let mut blocks = Vec::with_capacity(2);
            for b in 0..2 {
                let bp = format!("{p}.res{b}");
                let first = Conv::new(&mut ps, &mut rng, &layer_name(&bp, "conv1"), c, c, 3, g, false)?;
                let second = Conv::new(&mut ps, &mut rng, &layer_name(&bp, "conv2"), c, c, 3, g, false)?;
                layers.push(LayerSpec::new(layer_name(&bp, "conv1"), LayerKind::Conv3d, c, c));
                layers.push(LayerSpec::new(layer_name(&bp, "relu1"), LayerKind::Relu, c, c));
                layers.push(LayerSpec::new(layer_name(&bp, "conv2"), LayerKind::Conv3d, c, c));
                layers.push(LayerSpec::new(layer_name(&bp, "add"), LayerKind::ResidualAdd, c, c));
                layers.push(LayerSpec::new(layer_name(&bp, "relu2"), LayerKind::Relu, c, c));
                blocks.push(ResidualBlock { first, second });
            }
            let r = c / cfg.reduction;
            let squeeze = Dense::new(&mut ps, &mut rng, &format!("{p}.attention.squeeze"), c, r)?;
            let excite = Dense::new(&mut ps, &mut rng, &format!("{p}.attention.excite"), r, c)?;
            layers.push(LayerSpec::new(format!("{p}.attention.gap"), LayerKind::GlobalAvgPool, c, c));
            layers.push(LayerSpec::new(format!("{p}.attention.squeeze"), LayerKind::FullyConnected, c, r));
            layers.push(LayerSpec::new(format!("{p}.attention.relu"), LayerKind::Relu, r, r));
            layers.push(LayerSpec::new(format!("{p}.attention.excite"), LayerKind::FullyConnected, r, c));
            layers.push(LayerSpec::new(format!("{p}.attention.sigmoid"), LayerKind::Sigmoid, c, c));
            layers.push(LayerSpec::new(format!("{p}.rescale"), LayerKind::Rescale, c, c));
            layers.push(LayerSpec::new(format!("{p}.add"), LayerKind::ResidualAdd, c, c));
            let [b0, b1]: [ResidualBlock; 2] = blocks.try_into().expect("two blocks");
            modules.push(FeatureModule {
                blocks: [b0, b1],
                squeeze,
                excite,
            });
        }
        layers.push(LayerSpec::new("merge", LayerKind::ResidualAdd, c, c));
        let tail = Conv::new(&mut ps, &mut rng, "tail", c, 1, 3, g, false)?;
        layers.push(LayerSpec::new("tail", LayerKind::Conv3d, c, 1));
        layers.push(LayerSpec::new("global_add", LayerKind::ResidualAdd, 1, 1));
        layers.push(LayerSpec::new("out.relu", LayerKind::Relu, 1, 1));
        Ok(Self {
            cfg,
            params: ps,
            head,
            modules,
            tail,
            layers,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.cfg
    }

    /// Parameter id of the reconstruction convolution's kernel and bias.
    pub fn reconstruction_params(&self) -> (crate::params::ParamId, crate::params::ParamId) {
        (self.tail.weight, self.tail.bias)
    }

    /// Runs feature-learning module `index` on a `C×D×H×W` map.
    pub fn feature_learning_forward(&self, index: usize, input: &Tensor<T>) -> Result<ModuleTrace<T>> {
        let module = self.modules.get(index).ok_or_else(|| {
            Error::InvalidConfig(format!("module {index} out of range ({} modules)", self.modules.len()))
        })?;
        let (c, ..) = input.dims4()?;
        if c != self.cfg.channels {
            return Err(Error::ShapeMismatch {
                axis: "channel",
                expected: self.cfg.channels,
                actual: c,
            });
        }
        module.forward(&self.params, input)
    }

    /// Forward pass of one volume that keeps every intermediate.
    pub fn trace(&self, volume: &Tensor<T>) -> Result<DenoiserTrace<T>> {
        check_finite(volume)?;
        let input = to_feature_map(volume)?;
        let mut features = self.head.forward(&self.params, &input)?;
        Activation::Relu.apply_in_place(&mut features);
        let mut modules = Vec::with_capacity(self.modules.len());
        let mut current = features.clone();
        for m in &self.modules {
            let t = m.forward(&self.params, &current)?;
            current = t.output.clone();
            modules.push(t);
        }
        let merged = features.add(&current)?;
        let mut output = self.tail.forward(&self.params, &merged)?;
        output.add_assign(&input)?;
        Activation::Relu.apply_in_place(&mut output);
        Ok(DenoiserTrace {
            input,
            features,
            modules,
            merged,
            output,
        })
    }

    fn backward_one(&mut self, t: &DenoiserTrace<T>, grad: &Tensor<T>, want_input: bool) -> Result<Option<Tensor<T>>> {
        let g_out = to_feature_map(grad)?;
        let g_pre = Activation::Relu.backward(&t.output, &g_out);
        let ps = &mut self.params;
        let g_merged = self.tail.backward(ps, &t.merged, &g_pre, true)?.expect("input grad");
        let mut g_current = g_merged.clone();
        for (m, tr) in self.modules.iter().zip(&t.modules).rev() {
            g_current = m.backward(ps, tr, &g_current)?;
        }
        let mut g_features = g_merged;
        g_features.add_assign(&g_current)?;
        Activation::Relu.backward_in_place(&t.features, &mut g_features);
        let g_in = self.head.backward(ps, &t.input, &g_features, want_input)?;
        match g_in {
            Some(mut g) if want_input => {
                g.add_assign(&g_pre)?;
                Ok(Some(to_volume(g)?))
            }
            _ => Ok(None),
        }
    }
}

impl<T: Real> Network<T> for Denoiser<T> {
    type Cache = Vec<DenoiserTrace<T>>;

    fn architecture(&self) -> Architecture {
        Architecture::Denoiser(self.cfg)
    }

    fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    fn forward_train(&mut self, batch: &[Tensor<T>]) -> Result<(Vec<Tensor<T>>, Self::Cache)> {
        let traces = batch.iter().map(|v| self.trace(v)).collect::<Result<Vec<_>>>()?;
        let outs = traces
            .iter()
            .map(|t| to_volume(t.output.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok((outs, traces))
    }

    fn backward(
        &mut self,
        cache: Self::Cache,
        grad_out: &[Tensor<T>],
        want_input: bool,
    ) -> Result<Option<Vec<Tensor<T>>>> {
        let mut grads = Vec::with_capacity(cache.len());
        for (t, g) in cache.iter().zip(grad_out) {
            if let Some(gi) = self.backward_one(t, g, want_input)? {
                grads.push(gi);
            }
        }
        Ok(want_input.then_some(grads))
    }

    fn forward_infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        to_volume(self.trace(input)?.output)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::count_parameters;

    #[test]
    fn default_parameter_count() {
        let net = Denoiser::<f32>::new(DenoiserConfig::default(), 0).unwrap();
        assert_eq!(count_parameters(&net), 14_413);
    }

    #[test]
    fn ledger_is_441_plus_6986_per_module() {
        for m in 0..4 {
            let cfg = DenoiserConfig { modules: m, channels: 8, reduction: 4 };
            let net = Denoiser::<f32>::new(cfg, 0).unwrap();
            assert_eq!(count_parameters(&net), 441 + m * 6_986);
        }
    }

    #[test]
    fn reduction_must_divide_channels() {
        let cfg = DenoiserConfig { modules: 2, channels: 8, reduction: 3 };
        assert!(matches!(Denoiser::<f32>::new(cfg, 0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn hyperparameter_sweep_builds() {
        for m in 0..=2 {
            for c in [2, 4, 8] {
                let r = if c >= 4 { 4 } else { 2 };
                let cfg = DenoiserConfig { modules: m, channels: c, reduction: r };
                Denoiser::<f32>::new(cfg, 1).unwrap();
            }
        }
    }

    #[test]
    fn shape_is_preserved() {
        let cfg = DenoiserConfig { modules: 1, channels: 2, reduction: 2 };
        let net = Denoiser::<f64>::new(cfg, 5).unwrap();
        let y = Tensor::from_fn(&[16, 24, 32], |i| ((i * 37) % 101) as f64 / 100.0);
        let out = net.forward_infer(&y).unwrap();
        assert_eq!(out.shape(), &[16, 24, 32]);
        assert!(out.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn non_finite_input_rejected() {
        let net = Denoiser::<f64>::new(DenoiserConfig { modules: 0, channels: 2, reduction: 1 }, 0).unwrap();
        let mut y = Tensor::zeros(&[3, 3, 3]);
        y.data_mut()[4] = f64::NAN;
        assert!(matches!(net.forward_infer(&y), Err(Error::NonFinite(_))));
    }
}
