//! Central finite-difference checks of the analytic backward passes.
//!
//! A [`GradCase`] packs every differentiable quantity of an operation
//! (inputs and parameters) into one flat vector and reduces the output to a
//! scalar with a fixed random weighting, so a single analytic backward pass
//! yields the full gradient to compare against.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nets::{Denoiser, DenoiserConfig, Inverter, InverterConfig, Network};
use crate::ops::activation::Activation;
use crate::ops::concat::{concat_channels, split_channels};
use crate::ops::conv::{conv3d, conv3d_backward, transposed_conv3d, transposed_conv3d_backward, ConvGeometry};
use crate::ops::linear::{fully_connected, fully_connected_backward};
use crate::ops::norm::{batch_norm3d_backward, batch_norm3d_train, BatchNormConfig, RunningStats};
use crate::ops::pool::{global_avg_pool, global_avg_pool_backward, max_pool3d, max_pool3d_backward};
use crate::ops::rescale::{scale_channels, scale_channels_backward};
use crate::params::ParamKind;
use crate::tensor::Tensor;
use crate::train::loss::LossKind;

/// Denominator floor so vanishing gradients do not blow up the ratio.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// Step used for the per-operation suite.
pub const OP_STEP: f64 = 1e-3;

/// Step used for the end-to-end network suite. Smaller than [`OP_STEP`]
/// so perturbations rarely carry a ReLU pre-activation across zero.
pub const NETWORK_STEP: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let up = f(&probe);
            probe[i] = x[i] - step;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// A scalar function of a flat parameter vector with an analytic gradient.
pub trait GradCase {
    fn name(&self) -> &str;
    fn point(&self) -> &[f64];
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
}

/// Closure-backed [`GradCase`].
pub struct FnCase<V, G> {
    pub name: String,
    pub point: Vec<f64>,
    pub value: V,
    pub gradient: G,
}

impl<V, G> GradCase for FnCase<V, G>
where
    V: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn point(&self) -> &[f64] {
        &self.point
    }

    fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (self.gradient)(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub name: String,
    pub max_relative_error: f64,
    /// Coordinate where the worst error occurred.
    pub worst_index: usize,
    pub coordinates: usize,
}

/// Compares the analytic gradient of `case` at its sample point against
/// central differences and returns the maximum relative error.
pub fn grad_check(case: &dyn GradCase, step: f64) -> GradCheckReport {
    let x = case.point();
    let analytic = case.gradient(x);
    let numeric = central_difference(|p| case.value(p), x, step);
    let (worst_index, max_relative_error) = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .enumerate()
        .fold((0, 0.0), |best, (i, e)| if e > best.1 { (i, e) } else { best });
    GradCheckReport {
        name: case.name().into(),
        max_relative_error,
        worst_index,
        coordinates: x.len(),
    }
}

/// Splits a flat vector into tensors of the given shapes.
fn unpack(x: &[f64], shapes: &[&[usize]]) -> Vec<Tensor<f64>> {
    let mut at = 0;
    shapes
        .iter()
        .map(|s| {
            let n: usize = s.iter().product();
            let t = Tensor::from_vec(s, x[at..at + n].to_vec()).expect("packed length");
            at += n;
            t
        })
        .collect()
}

fn pack<'a>(parts: impl IntoIterator<Item = &'a [f64]>) -> Vec<f64> {
    parts.into_iter().flat_map(|p| p.iter().copied()).collect()
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Uniform in `[-1, 1]` but at least `margin` away from zero.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], margin: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m: f64 = rng.random_range(margin..1.0);
        if rng.random::<bool>() {
            m
        } else {
            -m
        }
    })
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

type BoxedCase = Box<dyn GradCase>;

fn case<V, G>(name: &str, point: Vec<f64>, value: V, gradient: G) -> BoxedCase
where
    V: Fn(&[f64]) -> f64 + 'static,
    G: Fn(&[f64]) -> Vec<f64> + 'static,
{
    Box::new(FnCase {
        name: name.into(),
        point,
        value,
        gradient,
    })
}

fn conv_case(name: &str, rng: &mut ChaCha8Rng, input: [usize; 4], cout: usize, k: usize, geom: ConvGeometry, transposed: bool) -> BoxedCase {
    let cin = input[0];
    let x = uniform(rng, &input);
    let kshape = [cout, cin, k, k, k];
    let w = uniform(rng, &kshape);
    let b = uniform(rng, &[cout]);
    let run = move |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| {
        if transposed {
            transposed_conv3d(x, w, b, &geom)
        } else {
            conv3d(x, w, b, &geom)
        }
        .expect("valid conv case")
    };
    let weights = uniform(rng, run(&x, &w, &b).shape());
    let point = pack([x.data(), w.data(), b.data()]);
    let wv = weights.clone();
    case(
        name,
        point,
        move |p| {
            let t = unpack(p, &[&input, &kshape, &[cout]]);
            dot(&run(&t[0], &t[1], &t[2]), &wv)
        },
        move |p| {
            let t = unpack(p, &[&input, &kshape, &[cout]]);
            let mut gk = vec![0.0; t[1].len()];
            let mut gb = vec![0.0; cout];
            let gx = if transposed {
                transposed_conv3d_backward(&t[0], &t[1], &geom, &weights, &mut gk, &mut gb, true)
            } else {
                conv3d_backward(&t[0], &t[1], &geom, &weights, &mut gk, &mut gb, true)
            }
            .expect("valid conv case")
            .expect("input gradient");
            pack([gx.data(), &gk[..], &gb[..]])
        },
    )
}

/// One case per differentiable operation.
pub fn op_cases(seed: u64) -> Vec<BoxedCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    let mut cases = vec![
        conv_case("conv3d", rng, [2, 5, 5, 5], 3, 3, ConvGeometry::SAME3, false),
        conv_case("conv3d_strided", rng, [2, 5, 5, 5], 2, 3, ConvGeometry::new(2, 0), false),
        conv_case("conv3d_anisotropic", rng, [1, 4, 5, 6], 2, 3, ConvGeometry { stride: [1, 2, 1], padding: [1, 0, 2] }, false),
        conv_case("transposed_conv3d", rng, [2, 2, 3, 2], 3, 2, ConvGeometry::UP2, true),
        conv_case("transposed_conv3d_overlapping", rng, [2, 3, 2, 2], 2, 3, ConvGeometry::new(2, 0), true),
    ];

    // Distinct values spaced well beyond the step so no block flips argmax.
    let shape = [2usize, 4, 4, 4];
    let n: usize = shape.iter().product();
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let x = Tensor::from_fn(&shape, |i| order[i] as f64 / n as f64 * 2.0 - 1.0);
    let wts = uniform(rng, &[2, 2, 2, 2]);
    let wg = wts.clone();
    cases.push(case(
        "max_pool3d",
        x.data().to_vec(),
        move |p| dot(&max_pool3d(&unpack(p, &[&shape])[0]).unwrap().output, &wts),
        move |p| {
            let pooled = max_pool3d(&unpack(p, &[&shape])[0]).unwrap();
            max_pool3d_backward(&shape, &pooled.argmax, &wg).unwrap().into_data()
        },
    ));

    let shape = [3usize, 2, 3, 4];
    let x = uniform(rng, &shape);
    let wts = uniform(rng, &[3]);
    let wg = wts.clone();
    cases.push(case(
        "global_avg_pool",
        x.into_data(),
        move |p| dot(&global_avg_pool(&unpack(p, &[&shape])[0]).unwrap(), &wts),
        move |_| global_avg_pool_backward(&shape, &wg).unwrap().into_data(),
    ));

    let (cin, cout) = (5usize, 3usize);
    let x = uniform(rng, &[cin]);
    let w = uniform(rng, &[cout, cin]);
    let b = uniform(rng, &[cout]);
    let wts = uniform(rng, &[cout]);
    let wg = wts.clone();
    cases.push(case(
        "fully_connected",
        pack([x.data(), w.data(), b.data()]),
        move |p| {
            let t = unpack(p, &[&[cin], &[cout, cin], &[cout]]);
            dot(&fully_connected(&t[0], &t[1], &t[2]).unwrap(), &wts)
        },
        move |p| {
            let t = unpack(p, &[&[cin], &[cout, cin], &[cout]]);
            let mut gw = vec![0.0; cout * cin];
            let mut gb = vec![0.0; cout];
            let gx = fully_connected_backward(&t[0], &t[1], &wg, &mut gw, &mut gb).unwrap();
            pack([gx.data(), &gw[..], &gb[..]])
        },
    ));

    let shape = [2usize, 2, 3, 2];
    let batch: Vec<Tensor<f64>> = (0..2).map(|_| uniform(rng, &shape)).collect();
    let gamma = Tensor::from_fn(&[2], |_| rng.random_range(0.5..1.5));
    let beta = uniform(rng, &[2]);
    let wts: Vec<Tensor<f64>> = (0..2).map(|_| uniform(rng, &shape)).collect();
    let wg = wts.clone();
    let bn = move |p: &[f64]| {
        let t = unpack(p, &[&shape, &shape, &[2], &[2]]);
        let (mut m, mut v, mut c) = (vec![0.0; 2], vec![1.0; 2], 0.0);
        let stats = RunningStats {
            mean: &mut m,
            var: &mut v,
            count: &mut c,
        };
        let (out, cache) = batch_norm3d_train(&t[..2], t[2].data(), t[3].data(), stats, &BatchNormConfig::default()).unwrap();
        (t, out, cache)
    };
    cases.push(case(
        "batch_norm3d",
        pack([batch[0].data(), batch[1].data(), gamma.data(), beta.data()]),
        move |p| {
            let (_, out, _) = bn(p);
            out.iter().zip(&wts).map(|(o, w)| dot(o, w)).sum()
        },
        move |p| {
            let (t, _, cache) = bn(p);
            let (mut gg, mut gb) = (vec![0.0; 2], vec![0.0; 2]);
            let gx = batch_norm3d_backward(&cache, t[2].data(), &wg, &mut gg, &mut gb).unwrap();
            pack([gx[0].data(), gx[1].data(), &gg[..], &gb[..]])
        },
    ));

    for (name, act) in [("relu", Activation::Relu), ("sigmoid", Activation::Sigmoid), ("linear", Activation::Linear)] {
        let shape = [2usize, 2, 2, 3];
        let x = away_from_zero(rng, &shape, 0.05);
        let wts = uniform(rng, &shape);
        let wg = wts.clone();
        cases.push(case(
            name,
            x.into_data(),
            move |p| dot(&act.apply(&unpack(p, &[&shape])[0]), &wts),
            move |p| act.backward(&act.apply(&unpack(p, &[&shape])[0]), &wg).into_data(),
        ));
    }

    let (sa, sb) = ([2usize, 2, 2, 2], [3usize, 2, 2, 2]);
    let a = uniform(rng, &sa);
    let b = uniform(rng, &sb);
    let wts = uniform(rng, &[5, 2, 2, 2]);
    let wg = wts.clone();
    cases.push(case(
        "concat_channels",
        pack([a.data(), b.data()]),
        move |p| {
            let t = unpack(p, &[&sa, &sb]);
            dot(&concat_channels(&[&t[0], &t[1]]).unwrap(), &wts)
        },
        move |_| {
            let parts = split_channels(&wg, &[2, 3]).unwrap();
            pack([parts[0].data(), parts[1].data()])
        },
    ));

    let shape = [3usize, 2, 2, 2];
    let x = uniform(rng, &shape);
    let s = uniform(rng, &[3]);
    let wts = uniform(rng, &shape);
    let wg = wts.clone();
    cases.push(case(
        "rescale",
        pack([x.data(), s.data()]),
        move |p| {
            let t = unpack(p, &[&shape, &[3]]);
            dot(&scale_channels(&t[0], &t[1]).unwrap(), &wts)
        },
        move |p| {
            let t = unpack(p, &[&shape, &[3]]);
            let (gx, gs) = scale_channels_backward(&t[0], &t[1], &wg).unwrap();
            pack([gx.data(), gs.data()])
        },
    ));

    let shape = [2usize, 2, 2, 2];
    let a = uniform(rng, &shape);
    let b = uniform(rng, &shape);
    let wts = uniform(rng, &shape);
    let wg = wts.clone();
    cases.push(case(
        "residual_add",
        pack([a.data(), b.data()]),
        move |p| {
            let t = unpack(p, &[&shape, &shape]);
            dot(&t[0].add(&t[1]).unwrap(), &wts)
        },
        move |_| pack([wg.data(), wg.data()]),
    ));

    for (name, kind) in [("loss_mse", LossKind::Mse), ("loss_mae", LossKind::Mae)] {
        let shape = [3usize, 3, 3];
        let truth = uniform(rng, &shape);
        let offset = away_from_zero(rng, &shape, 0.05);
        let pred = truth.add(&offset).unwrap();
        let tv = truth.clone();
        cases.push(case(
            name,
            pred.into_data(),
            move |p| kind.value(&unpack(p, &[&shape])[0], &truth).unwrap(),
            move |p| kind.value_and_grad(&unpack(p, &[&shape])[0], &tv).unwrap().1.into_data(),
        ));
    }
    cases
}

/// Writes `x` into the trainable parameters (in registry order) followed by
/// the batch volumes.
fn load_point<N: Network<f64>>(net: &mut N, x: &[f64], batch_shape: &[usize], batch: usize) -> Vec<Tensor<f64>> {
    let mut at = 0;
    for e in net.params_mut().entries_mut() {
        if e.kind == ParamKind::Trainable {
            let n = e.tensor.len();
            e.tensor.data_mut().copy_from_slice(&x[at..at + n]);
            at += n;
        }
    }
    let per: usize = batch_shape.iter().product();
    (0..batch)
        .map(|i| Tensor::from_vec(batch_shape, x[at + i * per..at + (i + 1) * per].to_vec()).unwrap())
        .collect()
}

/// Gradient check of `loss(net(batch), targets)` with respect to every
/// trainable parameter and every input voxel.
pub fn network_case<N>(name: &str, net: N, batch: Vec<Tensor<f64>>, targets: Vec<Tensor<f64>>, loss: LossKind) -> Result<BoxedCase>
where
    N: Network<f64> + Clone + 'static,
{
    let shape = batch[0].shape().to_vec();
    let count = batch.len();
    let mut point: Vec<f64> = net
        .params()
        .entries()
        .iter()
        .filter(|e| e.kind == ParamKind::Trainable)
        .flat_map(|e| e.tensor.data().iter().copied())
        .collect();
    for b in &batch {
        point.extend_from_slice(b.data());
    }
    let scale = 1.0 / count as f64;
    let (net_v, shape_v, targets_v) = (net.clone(), shape.clone(), targets.clone());
    Ok(case(
        name,
        point,
        move |p| {
            let mut n = net_v.clone();
            let inputs = load_point(&mut n, p, &shape_v, count);
            let (out, _) = n.forward_train(&inputs).expect("forward");
            out.iter().zip(&targets_v).map(|(o, t)| loss.value(o, t).unwrap() * scale).sum()
        },
        move |p| {
            let mut n = net.clone();
            let inputs = load_point(&mut n, p, &shape, count);
            n.params_mut().zero_grads();
            let (out, cache) = n.forward_train(&inputs).expect("forward");
            let grads: Vec<Tensor<f64>> = out
                .iter()
                .zip(&targets)
                .map(|(o, t)| loss.value_and_grad(o, t).unwrap().1.scale(scale))
                .collect();
            let gx = n.backward(cache, &grads, true).expect("backward").expect("input gradient");
            let mut g: Vec<f64> = n
                .params()
                .entries()
                .iter()
                .filter(|e| e.kind == ParamKind::Trainable)
                .flat_map(|e| match &e.tensor.grad {
                    Some(gr) => gr.clone(),
                    None => vec![0.0; e.tensor.len()],
                })
                .collect();
            for t in &gx {
                g.extend_from_slice(t.data());
            }
            g
        },
    ))
}

/// Zero-initialized biases put ReLU pre-activations exactly on the kink
/// wherever a feature map is dead; jitter them to get a generic point.
fn jitter_biases<N: Network<f64>>(net: &mut N, rng: &mut ChaCha8Rng) {
    for e in net.params_mut().entries_mut() {
        if e.kind == ParamKind::Trainable && e.name.ends_with(".bias") {
            e.tensor.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.1..0.1));
        }
    }
}

/// The two tiny end-to-end cases: a one-module two-channel denoiser and a
/// one-level two-channel inverter, both on 8³ volumes.
pub fn network_cases(seed: u64) -> Result<Vec<BoxedCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = [8usize, 8, 8];
    let mut den = Denoiser::<f64>::new(
        DenoiserConfig {
            modules: 1,
            channels: 2,
            reduction: 2,
        },
        seed,
    )?;
    jitter_biases(&mut den, &mut rng);
    let x = Tensor::from_fn(&shape, |_| rng.random_range(0.0..1.0));
    let y = Tensor::from_fn(&shape, |_| rng.random_range(0.0..1.0));
    let d = network_case("denoiser_end_to_end", den, vec![x], vec![y], LossKind::Mse)?;

    let mut inv = Inverter::<f64>::new(
        InverterConfig {
            depth: 1,
            channels: 2,
            msfa: true,
        },
        seed,
    )?;
    jitter_biases(&mut inv, &mut rng);
    let xs: Vec<_> = (0..2).map(|_| Tensor::from_fn(&shape, |_| rng.random_range(0.0..1.0))).collect();
    // Targets a fixed offset away from the starting prediction keep the
    // loss O(1) and every absolute-error sign stable under perturbation.
    let (start, _) = inv.clone().forward_train(&xs)?;
    let ys: Vec<_> = start
        .iter()
        .map(|o| o.add(&away_from_zero(&mut rng, &shape, 0.05)))
        .collect::<Result<_>>()?;
    let i = network_case("inverter_end_to_end", inv, xs, ys, LossKind::Mae)?;
    Ok(vec![d, i])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_slope_at_zero() {
        let c = case(
            "sigmoid0",
            vec![0.0],
            |p| crate::ops::activation::sigmoid(p[0]),
            |p| {
                let y = Tensor::full(&[1], crate::ops::activation::sigmoid(p[0]));
                Activation::Sigmoid.backward(&y, &Tensor::full(&[1], 1.0)).into_data()
            },
        );
        assert_eq!(c.gradient(c.point()), vec![0.25]);
        assert!(grad_check(c.as_ref(), OP_STEP).max_relative_error < 1e-6);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
    }

    #[test]
    fn every_op_within_tolerance() {
        for c in op_cases(11) {
            let r = grad_check(c.as_ref(), OP_STEP);
            assert!(r.max_relative_error < 1e-4, "{r:?}");
        }
    }
}
