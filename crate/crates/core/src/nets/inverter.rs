//! 3D U-shaped inversion network with multi-scale feature aggregation.
//!
//! Every encoding and decoding block is an MSFA module: three successive
//! `conv(3, s=1, p=1) -> BN -> ReLU` stages whose outputs (receptive fields
//! 3, 5 and 7) are concatenated along channels. With aggregation disabled
//! only the last stage is forwarded, which gives the plain three-conv U-Net
//! used as the ablation baseline.
//!
//! Level widths double on the way down (`C, 2C, ..., 2^(n-1) C`), a bridge
//! block of width `2^n C` joins the two halves, and each decoder level
//! upsamples with a `k=2, s=2` transposed convolution (+BN+ReLU) before
//! concatenating the encoder block output of the same resolution.

use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{BatchNorm, Conv, LayerKind, LayerSpec};
use super::{check_finite, to_feature_map, to_volume, Architecture, Network};
use crate::error::{Error, Result};
use crate::ops::activation::Activation;
use crate::ops::concat::{concat_channels, split_channels};
use crate::ops::conv::ConvGeometry;
use crate::ops::norm::{BatchNormCache, BatchNormConfig};
use crate::ops::pool::{max_pool3d, max_pool3d_backward};
use crate::params::ParamStore;
use crate::scalar::Real;
use crate::tensor::{axis_name, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InverterConfig {
    /// Number of encoding (and decoding) blocks.
    pub depth: usize,
    /// Width of the first encoding block.
    pub channels: usize,
    /// Concatenate all three MSFA stages instead of forwarding the last one.
    pub msfa: bool,
}

impl Default for InverterConfig {
    fn default() -> Self {
        Self {
            depth: 4,
            channels: 8,
            msfa: true,
        }
    }
}

impl InverterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::InvalidConfig("inverter depth must be >= 1".into()));
        }
        if self.channels == 0 {
            return Err(Error::InvalidConfig("inverter channels must be >= 1".into()));
        }
        Ok(())
    }

    /// Spatial extents must be divisible by this.
    pub fn divisor(&self) -> usize {
        1 << self.depth
    }

    pub fn check_extents(&self, dims: [usize; 3]) -> Result<()> {
        let div = self.divisor();
        for (i, &e) in dims.iter().enumerate() {
            if e == 0 || e % div != 0 {
                return Err(Error::NotDivisible {
                    axis: axis_name(3, i),
                    extent: e,
                    divisor: div,
                });
            }
        }
        Ok(())
    }
}

/// Receptive field of each layer in a stack:
/// `r_f = r_{f-1} + (k_f - 1) * prod_{i<f} s_i`, starting from `r_0 = 1`.
pub fn receptive_field(kernels: &[usize], strides: &[usize]) -> Result<Vec<usize>> {
    if kernels.is_empty() || kernels.len() != strides.len() {
        return Err(Error::InvalidConfig(
            "kernel and stride lists must be non-empty and of equal length".into(),
        ));
    }
    if kernels.iter().chain(strides).any(|&v| v == 0) {
        return Err(Error::InvalidConfig("kernel and stride entries must be >= 1".into()));
    }
    let mut r = 1;
    let mut jump = 1;
    Ok(kernels
        .iter()
        .zip(strides)
        .map(|(&k, &s)| {
            r += (k - 1) * jump;
            jump *= s;
            r
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct Msfa {
    convs: [Conv; 3],
    norms: [BatchNorm; 3],
    concat: bool,
    width: usize,
}

#[derive(Debug, Clone)]
pub struct MsfaCache<T> {
    inputs: Vec<Tensor<T>>,
    /// Post-activation output of each stage, per sample.
    stages: [Vec<Tensor<T>>; 3],
    norms: Vec<BatchNormCache<T>>,
}

impl Msfa {
    fn new<T: Real>(
        ps: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        layers: &mut Vec<LayerSpec>,
        name: &str,
        in_channels: usize,
        width: usize,
        concat: bool,
        bn: BatchNormConfig,
    ) -> Result<Self> {
        let mut convs = Vec::with_capacity(3);
        let mut norms = Vec::with_capacity(3);
        for s in 0..3 {
            let cin = if s == 0 { in_channels } else { width };
            let cname = format!("{name}.conv{s}");
            convs.push(Conv::new(ps, rng, &cname, cin, width, 3, ConvGeometry::SAME3, false)?);
            norms.push(BatchNorm::new(ps, &format!("{name}.bn{s}"), width, bn)?);
            layers.push(LayerSpec::new(cname, LayerKind::Conv3d, cin, width));
            layers.push(LayerSpec::new(format!("{name}.bn{s}"), LayerKind::BatchNorm, width, width));
            layers.push(LayerSpec::new(format!("{name}.relu{s}"), LayerKind::Relu, width, width));
        }
        if concat {
            layers.push(LayerSpec::new(format!("{name}.concat"), LayerKind::Concat, 3 * width, 3 * width));
        }
        Ok(Self {
            convs: convs.try_into().expect("three convs"),
            norms: norms.try_into().expect("three norms"),
            concat,
            width,
        })
    }

    pub fn out_channels(&self) -> usize {
        if self.concat {
            3 * self.width
        } else {
            self.width
        }
    }

    fn join<T: Real>(&self, stages: [&Tensor<T>; 3]) -> Result<Tensor<T>> {
        if self.concat {
            concat_channels(&stages)
        } else {
            Ok(stages[2].clone())
        }
    }

    fn forward_train<T: Real>(&self, ps: &mut ParamStore<T>, batch: Vec<Tensor<T>>) -> Result<(Vec<Tensor<T>>, MsfaCache<T>)> {
        let mut stages: [Vec<Tensor<T>>; 3] = Default::default();
        let mut caches = Vec::with_capacity(3);
        for s in 0..3 {
            let src = if s == 0 { &batch } else { &stages[s - 1] };
            let pre = src.iter().map(|x| self.convs[s].forward(ps, x)).collect::<Result<Vec<_>>>()?;
            let (mut normed, cache) = self.norms[s].forward_train(ps, &pre)?;
            normed.iter_mut().for_each(|t| Activation::Relu.apply_in_place(t));
            stages[s] = normed;
            caches.push(cache);
        }
        let outs = (0..batch.len())
            .map(|i| self.join([&stages[0][i], &stages[1][i], &stages[2][i]]))
            .collect::<Result<Vec<_>>>()?;
        Ok((
            outs,
            MsfaCache {
                inputs: batch,
                stages,
                norms: caches,
            },
        ))
    }

    fn forward_infer<T: Real>(&self, ps: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut s0 = self.norms[0].forward_infer(ps, &self.convs[0].forward(ps, x)?)?;
        Activation::Relu.apply_in_place(&mut s0);
        let mut s1 = self.norms[1].forward_infer(ps, &self.convs[1].forward(ps, &s0)?)?;
        Activation::Relu.apply_in_place(&mut s1);
        let mut s2 = self.norms[2].forward_infer(ps, &self.convs[2].forward(ps, &s1)?)?;
        Activation::Relu.apply_in_place(&mut s2);
        self.join([&s0, &s1, &s2])
    }

    fn backward<T: Real>(&self, ps: &mut ParamStore<T>, cache: MsfaCache<T>, grad: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        let n = grad.len();
        // Gradient arriving at each stage output.
        let mut g_stage: [Vec<Tensor<T>>; 3] = Default::default();
        if self.concat {
            for g in grad {
                let mut parts = split_channels(g, &[self.width; 3])?.into_iter();
                for s in 0..3 {
                    g_stage[s].push(parts.next().expect("three parts"));
                }
            }
        } else {
            for s in 0..2 {
                g_stage[s] = cache.stages[s].iter().map(|t| Tensor::zeros(t.shape())).collect();
            }
            g_stage[2] = grad.to_vec();
        }
        let mut carry: Option<Vec<Tensor<T>>> = None;
        for s in (0..3).rev() {
            let mut g = core::mem::take(&mut g_stage[s]);
            if let Some(c) = carry.take() {
                for (a, b) in g.iter_mut().zip(&c) {
                    a.add_assign(b)?;
                }
            }
            for (gi, out) in g.iter_mut().zip(&cache.stages[s]) {
                Activation::Relu.backward_in_place(out, gi);
            }
            let g_pre = self.norms[s].backward(ps, &cache.norms[s], &g)?;
            let mut next = Vec::with_capacity(n);
            for i in 0..n {
                let x = if s == 0 { &cache.inputs[i] } else { &cache.stages[s - 1][i] };
                next.push(self.convs[s].backward(ps, x, &g_pre[i], true)?.expect("input grad"));
            }
            carry = Some(next);
        }
        Ok(carry.expect("three stages"))
    }
}

#[derive(Debug, Clone)]
struct UpBlock {
    tconv: Conv,
    norm: BatchNorm,
    msfa: Msfa,
}

#[derive(Debug, Clone)]
pub struct Inverter<T> {
    cfg: InverterConfig,
    params: ParamStore<T>,
    encoders: Vec<Msfa>,
    bridge: Msfa,
    decoders: Vec<UpBlock>,
    head: Conv,
    layers: Vec<LayerSpec>,
}

struct UpCache<T> {
    tconv_in: Vec<Tensor<T>>,
    up: Vec<Tensor<T>>,
    norm: BatchNormCache<T>,
    msfa: MsfaCache<T>,
}

/// Intermediates kept by [`Inverter::forward_train`].
pub struct InverterCache<T> {
    input_shape: [usize; 3],
    encoders: Vec<MsfaCache<T>>,
    pool_argmax: Vec<Vec<Vec<usize>>>,
    skip_shapes: Vec<Vec<usize>>,
    bridge: MsfaCache<T>,
    decoders: Vec<UpCache<T>>,
    head_in: Vec<Tensor<T>>,
}

impl<T: Real> Inverter<T> {
    pub fn new(cfg: InverterConfig, seed: u64) -> Result<Self> {
        Self::with_batch_norm(cfg, seed, BatchNormConfig::default())
    }

    pub fn with_batch_norm(cfg: InverterConfig, seed: u64, bn: BatchNormConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamStore::new();
        let mut layers = Vec::new();
        let mut encoders = Vec::with_capacity(cfg.depth);
        let mut in_ch = 1;
        for l in 0..cfg.depth {
            let width = cfg.channels << l;
            let m = Msfa::new(&mut ps, &mut rng, &mut layers, &format!("enc{l}"), in_ch, width, cfg.msfa, bn)?;
            layers.push(LayerSpec::new(format!("enc{l}.pool"), LayerKind::MaxPool, m.out_channels(), m.out_channels()));
            in_ch = m.out_channels();
            encoders.push(m);
        }
        let bridge = Msfa::new(&mut ps, &mut rng, &mut layers, "bridge", in_ch, cfg.channels << cfg.depth, cfg.msfa, bn)?;
        in_ch = bridge.out_channels();
        let mut decoders = Vec::with_capacity(cfg.depth);
        for l in (0..cfg.depth).rev() {
            let width = cfg.channels << l;
            let name = format!("dec{l}");
            let tconv = Conv::new(&mut ps, &mut rng, &format!("{name}.up"), in_ch, width, 2, ConvGeometry::UP2, true)?;
            let norm = BatchNorm::new(&mut ps, &format!("{name}.up_bn"), width, bn)?;
            layers.push(LayerSpec::new(format!("{name}.up"), LayerKind::TransposedConv3d, in_ch, width));
            layers.push(LayerSpec::new(format!("{name}.up_bn"), LayerKind::BatchNorm, width, width));
            layers.push(LayerSpec::new(format!("{name}.up_relu"), LayerKind::Relu, width, width));
            let skip = encoders[l].out_channels();
            layers.push(LayerSpec::new(format!("{name}.skip"), LayerKind::Concat, width + skip, width + skip));
            let msfa = Msfa::new(&mut ps, &mut rng, &mut layers, &name, width + skip, width, cfg.msfa, bn)?;
            in_ch = msfa.out_channels();
            decoders.push(UpBlock { tconv, norm, msfa });
        }
        let head = Conv::new(&mut ps, &mut rng, "head", in_ch, 1, 3, ConvGeometry::SAME3, false)?;
        layers.push(LayerSpec::new("head", LayerKind::Conv3d, in_ch, 1));
        layers.push(LayerSpec::new("head.linear", LayerKind::Linear, 1, 1));
        Ok(Self {
            cfg,
            params: ps,
            encoders,
            bridge,
            decoders,
            head,
            layers,
        })
    }

    pub fn config(&self) -> &InverterConfig {
        &self.cfg
    }

    fn check_input(&self, volume: &Tensor<T>) -> Result<()> {
        let (d, h, w) = volume.dims3()?;
        self.cfg.check_extents([d, h, w])?;
        check_finite(volume)
    }
}

impl<T: Real> Network<T> for Inverter<T> {
    type Cache = InverterCache<T>;

    fn architecture(&self) -> Architecture {
        Architecture::Inverter(self.cfg)
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
        let first = batch.first().ok_or_else(|| Error::InvalidShape("empty batch".into()))?;
        let (d, h, w) = first.dims3()?;
        for v in batch {
            first.check_same_shape(v)?;
            self.check_input(v)?;
        }
        let ps = &mut self.params;
        let mut x: Vec<Tensor<T>> = batch.iter().map(to_feature_map).collect::<Result<_>>()?;
        let mut enc_caches = Vec::with_capacity(self.encoders.len());
        let mut skips = Vec::with_capacity(self.encoders.len());
        let mut argmax = Vec::with_capacity(self.encoders.len());
        for enc in &self.encoders {
            let (out, cache) = enc.forward_train(ps, x)?;
            let mut pooled = Vec::with_capacity(out.len());
            let mut idx = Vec::with_capacity(out.len());
            for o in &out {
                let p = max_pool3d(o)?;
                pooled.push(p.output);
                idx.push(p.argmax);
            }
            enc_caches.push(cache);
            skips.push(out);
            argmax.push(idx);
            x = pooled;
        }
        let skip_shapes = skips.iter().map(|s| s[0].shape().to_vec()).collect();
        let (mut x, bridge) = self.bridge.forward_train(ps, x)?;
        let mut dec_caches = Vec::with_capacity(self.decoders.len());
        for (dec, skip) in self.decoders.iter().zip(skips.iter().rev()) {
            let pre = x.iter().map(|t| dec.tconv.forward(ps, t)).collect::<Result<Vec<_>>>()?;
            let (mut up, norm) = dec.norm.forward_train(ps, &pre)?;
            up.iter_mut().for_each(|t| Activation::Relu.apply_in_place(t));
            let cat = up
                .iter()
                .zip(skip)
                .map(|(u, s)| concat_channels(&[u, s]))
                .collect::<Result<Vec<_>>>()?;
            let (out, msfa) = dec.msfa.forward_train(ps, cat)?;
            dec_caches.push(UpCache {
                tconv_in: x,
                up,
                norm,
                msfa,
            });
            x = out;
        }
        let outs = x
            .iter()
            .map(|t| self.head.forward(ps, t).and_then(to_volume))
            .collect::<Result<Vec<_>>>()?;
        Ok((
            outs,
            InverterCache {
                input_shape: [d, h, w],
                encoders: enc_caches,
                pool_argmax: argmax,
                skip_shapes,
                bridge,
                decoders: dec_caches,
                head_in: x,
            },
        ))
    }

    fn backward(
        &mut self,
        cache: Self::Cache,
        grad_out: &[Tensor<T>],
        want_input: bool,
    ) -> Result<Option<Vec<Tensor<T>>>> {
        let ps = &mut self.params;
        let mut g: Vec<Tensor<T>> = Vec::with_capacity(grad_out.len());
        for (go, hin) in grad_out.iter().zip(&cache.head_in) {
            g.push(self.head.backward(ps, hin, &to_feature_map(go)?, true)?.expect("input grad"));
        }
        let depth = self.decoders.len();
        // Skip gradients indexed by encoder level.
        let mut g_skip: Vec<Option<Vec<Tensor<T>>>> = (0..depth).map(|_| None).collect();
        for (k, (dec, dc)) in self.decoders.iter().zip(cache.decoders).enumerate().rev() {
            let level = depth - 1 - k;
            let g_cat = dec.msfa.backward(ps, dc.msfa, &g)?;
            let width = dec.msfa.width;
            let skip_ch = cache.skip_shapes[level][0];
            let mut g_up = Vec::with_capacity(g_cat.len());
            let mut gs = Vec::with_capacity(g_cat.len());
            for gc in &g_cat {
                let mut parts = split_channels(gc, &[width, skip_ch])?.into_iter();
                g_up.push(parts.next().expect("up part"));
                gs.push(parts.next().expect("skip part"));
            }
            g_skip[level] = Some(gs);
            for (gu, u) in g_up.iter_mut().zip(&dc.up) {
                Activation::Relu.backward_in_place(u, gu);
            }
            let g_pre = dec.norm.backward(ps, &dc.norm, &g_up)?;
            g = g_pre
                .iter()
                .zip(&dc.tconv_in)
                .map(|(gp, xin)| dec.tconv.backward(ps, xin, gp, true).map(|o| o.expect("input grad")))
                .collect::<Result<Vec<_>>>()?;
        }
        g = self.bridge.backward(ps, cache.bridge, &g)?;
        for (l, (enc, ec)) in self.encoders.iter().zip(cache.encoders).enumerate().rev() {
            let shape = &cache.skip_shapes[l];
            let mut g_out = Vec::with_capacity(g.len());
            for (i, gp) in g.iter().enumerate() {
                let mut gi = max_pool3d_backward(shape, &cache.pool_argmax[l][i], gp)?;
                if let Some(gs) = &g_skip[l] {
                    gi.add_assign(&gs[i])?;
                }
                g_out.push(gi);
            }
            g = enc.backward(ps, ec, &g_out)?;
        }
        if !want_input {
            return Ok(None);
        }
        let [d, h, w] = cache.input_shape;
        Ok(Some(g.into_iter().map(|t| t.reshape(&[d, h, w])).collect::<Result<Vec<_>>>()?))
    }

    fn forward_infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(input)?;
        let ps = &self.params;
        let mut x = to_feature_map(input)?;
        let mut skips = Vec::with_capacity(self.encoders.len());
        for enc in &self.encoders {
            let out = enc.forward_infer(ps, &x)?;
            x = max_pool3d(&out)?.output;
            skips.push(out);
        }
        x = self.bridge.forward_infer(ps, &x)?;
        for (dec, skip) in self.decoders.iter().zip(skips.iter().rev()) {
            let mut up = dec.norm.forward_infer(ps, &dec.tconv.forward(ps, &x)?)?;
            Activation::Relu.apply_in_place(&mut up);
            x = dec.msfa.forward_infer(ps, &concat_channels(&[&up, skip])?)?;
        }
        to_volume(self.head.forward(ps, &x)?)
    }
}
