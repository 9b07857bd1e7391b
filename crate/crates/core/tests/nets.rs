mod common;

use common::*;
use rand::Rng;
use voxinv_core::nets::{count_parameters, receptive_field, Denoiser, DenoiserConfig, Inverter, InverterConfig, LayerKind, Network};
use voxinv_core::params::ParamStore;
use voxinv_core::tensor::Tensor;

fn p<'a>(ps: &'a ParamStore<f64>, name: &str) -> &'a Tensor<f64> {
    ps.get(ps.find(name).unwrap_or_else(|| panic!("no parameter {name}")))
}

fn set(ps: &mut ParamStore<f64>, name: &str, f: impl FnMut(usize) -> f64) {
    let id = ps.find(name).unwrap();
    let shape = ps.get(id).shape().to_vec();
    *ps.get_mut(id) = Tensor::from_fn(&shape, f);
}

fn jitter_all(ps: &mut ParamStore<f64>, seed: u64) {
    let mut r = rng(seed);
    for e in ps.entries_mut() {
        let name = e.name.clone();
        let t = &mut e.tensor;
        if name.ends_with("batches_tracked") {
            t.data_mut()[0] = 1.0;
        } else if name.ends_with("running_var") || name.ends_with("gamma") {
            t.data_mut().iter_mut().for_each(|v| *v = r.random_range(0.5..2.0));
        } else {
            t.data_mut().iter_mut().for_each(|v| *v = r.random_range(-0.5..0.5));
        }
    }
}

fn conv(ps: &ParamStore<f64>, name: &str, x: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
    conv3d_ref(x, p(ps, &format!("{name}.weight")), p(ps, &format!("{name}.bias")).data(), stride, pad)
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Residual blocks, pooling, attention and rescale written out directly.
fn module_ref(ps: &ParamStore<f64>, m: usize, x: &Tensor<f64>) -> (Tensor<f64>, Vec<f64>) {
    let pre = format!("modules.{m}");
    let mut f = x.clone();
    for b in 0..2 {
        let h = relu_ref(&conv(ps, &format!("{pre}.res{b}.conv1"), &f, 1, 1));
        f = relu_ref(&add_ref(&conv(ps, &format!("{pre}.res{b}.conv2"), &h, 1, 1), &f));
    }
    let z = gap_ref(&f);
    let s: Vec<f64> = fc_ref(&z, p(ps, &format!("{pre}.attention.squeeze.weight")), p(ps, &format!("{pre}.attention.squeeze.bias")).data())
        .into_iter()
        .map(|v| v.max(0.0))
        .collect();
    let v: Vec<f64> = fc_ref(&s, p(ps, &format!("{pre}.attention.excite.weight")), p(ps, &format!("{pre}.attention.excite.bias")).data())
        .into_iter()
        .map(sigmoid)
        .collect();
    let per = f.len() / f.shape()[0];
    let out = Tensor::from_fn(f.shape(), |i| v[i / per] * f.data()[i] + x.data()[i]);
    (out, v)
}

fn denoiser_ref(ps: &ParamStore<f64>, modules: usize, y: &Tensor<f64>) -> Tensor<f64> {
    let s = y.shape();
    let y4 = y.clone().reshape(&[1, s[0], s[1], s[2]]).unwrap();
    let f0 = relu_ref(&conv(ps, "head", &y4, 1, 1));
    let mut f = f0.clone();
    for m in 0..modules {
        f = module_ref(ps, m, &f).0;
    }
    let k = conv(ps, "tail", &add_ref(&f0, &f), 1, 1);
    relu_ref(&add_ref(&y4, &k)).reshape(s).unwrap()
}

#[test]
fn feature_module_matches_straight_line() {
    let mut net = Denoiser::<f64>::new(DenoiserConfig { modules: 1, channels: 2, reduction: 2 }, 3).unwrap();
    jitter_all(net.params_mut(), 4);
    let x = uniform(&mut rng(5), &[2, 2, 2, 2], -1.0, 1.0);
    let got = net.feature_learning_forward(0, &x).unwrap();
    let (want, v) = module_ref(net.params(), 0, &x);
    assert!(max_abs_diff(got.output.data(), want.data()) < 1e-10);
    assert!(max_abs_diff(got.attention.data(), &v) < 1e-10);
}

#[test]
fn zero_attention_weights_give_half() {
    let mut net = Denoiser::<f64>::new(DenoiserConfig { modules: 1, channels: 4, reduction: 2 }, 0).unwrap();
    for n in ["squeeze", "excite"] {
        for leaf in ["weight", "bias"] {
            set(net.params_mut(), &format!("modules.0.attention.{n}.{leaf}"), |_| 0.0);
        }
    }
    let x = uniform(&mut rng(1), &[4, 3, 3, 3], -1.0, 1.0);
    let t = net.feature_learning_forward(0, &x).unwrap();
    assert!(t.attention.data().iter().all(|&v| v == 0.5));
    // output = 0.5 * F2 + x, so (output - x) / 0.5 reproduces F2 from the straight-line path.
    let mut f = x.clone();
    for b in 0..2 {
        let ps = net.params();
        let h = relu_ref(&conv(ps, &format!("modules.0.res{b}.conv1"), &f, 1, 1));
        f = relu_ref(&add_ref(&conv(ps, &format!("modules.0.res{b}.conv2"), &h, 1, 1), &f));
    }
    let want = Tensor::from_fn(x.shape(), |i| 0.5 * f.data()[i] + x.data()[i]);
    assert!(max_abs_diff(t.output.data(), want.data()) < 1e-12);
}

#[test]
fn constant_channel_pools_to_its_value() {
    let x = Tensor::from_fn(&[2, 3, 4, 5], |i| if i < 60 { 0.37 } else { i as f64 });
    let z = voxinv_core::ops::pool::global_avg_pool(&x).unwrap();
    assert_eq!(z.data()[0], 0.37);
}

#[test]
fn denoiser_matches_straight_line() {
    let mut net = Denoiser::<f64>::new(DenoiserConfig { modules: 1, channels: 2, reduction: 2 }, 8).unwrap();
    jitter_all(net.params_mut(), 9);
    let y = uniform(&mut rng(10), &[4, 3, 5], 0.0, 1.0);
    let got = net.forward_infer(&y).unwrap();
    let want = denoiser_ref(net.params(), 1, &y);
    assert!(max_abs_diff(got.data(), want.data()) < 1e-10);
}

#[test]
pub fn zeroed_reconstruction_returns_relu_input() {
    let mut net = Denoiser::<f64>::new(DenoiserConfig::default(), 1).unwrap();
    let (w, b) = net.reconstruction_params();
    net.params_mut().get_mut(w).data_mut().fill(0.0);
    net.params_mut().get_mut(b).data_mut().fill(0.0);
    let y = uniform(&mut rng(2), &[6, 6, 6], 0.0, 1.0);
    assert_eq!(net.forward_infer(&y).unwrap().data(), y.data());
    let z = uniform(&mut rng(3), &[5, 4, 3], -1.0, 1.0);
    assert_eq!(net.forward_infer(&z).unwrap().data(), relu_ref(&z).data());
}

#[test]
fn denoiser_preserves_odd_shapes() {
    let net = Denoiser::<f32>::new(DenoiserConfig::default(), 0).unwrap();
    let y = Tensor::full(&[16, 24, 32], 0.5f32);
    assert_eq!(net.forward_infer(&y).unwrap().shape(), &[16, 24, 32]);
}

#[test]
fn denoiser_parameter_ledger() {
    for m in 0..=3 {
        let net = Denoiser::<f32>::new(DenoiserConfig { modules: m, channels: 8, reduction: 4 }, 0).unwrap();
        assert_eq!(count_parameters(&net), 441 + m * 6_986);
    }
    assert!(Denoiser::<f32>::new(DenoiserConfig { modules: 2, channels: 8, reduction: 3 }, 0).is_err());
}

fn msfa_ref(ps: &ParamStore<f64>, name: &str, x: &Tensor<f64>, concat: bool) -> Tensor<f64> {
    let mut stages = Vec::new();
    let mut cur = x.clone();
    for s in 0..3 {
        let c = conv(ps, &format!("{name}.conv{s}"), &cur, 1, 1);
        let bn = format!("{name}.bn{s}");
        cur = relu_ref(&bn_ref(
            &c,
            p(ps, &format!("{bn}.gamma")).data(),
            p(ps, &format!("{bn}.beta")).data(),
            p(ps, &format!("{bn}.running_mean")).data(),
            p(ps, &format!("{bn}.running_var")).data(),
            1e-5,
        ));
        stages.push(cur.clone());
    }
    if concat {
        concat_ref(&[&stages[0], &stages[1], &stages[2]])
    } else {
        cur
    }
}

fn inverter_ref(ps: &ParamStore<f64>, concat: bool, y: &Tensor<f64>) -> Tensor<f64> {
    let s = y.shape();
    let x = y.clone().reshape(&[1, s[0], s[1], s[2]]).unwrap();
    let skip = msfa_ref(ps, "enc0", &x, concat);
    let pooled = max_pool_ref(&skip);
    let bridge = msfa_ref(ps, "bridge", &pooled, concat);
    let up = tconv3d_ref(&bridge, p(ps, "dec0.up.weight"), p(ps, "dec0.up.bias").data(), 2, 0);
    let up = relu_ref(&bn_ref(
        &up,
        p(ps, "dec0.up_bn.gamma").data(),
        p(ps, "dec0.up_bn.beta").data(),
        p(ps, "dec0.up_bn.running_mean").data(),
        p(ps, "dec0.up_bn.running_var").data(),
        1e-5,
    ));
    let dec = msfa_ref(ps, "dec0", &concat_ref(&[&up, &skip]), concat);
    conv(ps, "head", &dec, 1, 1).reshape(s).unwrap()
}

#[test]
fn inverter_matches_straight_line() {
    for msfa in [true, false] {
        let mut net = Inverter::<f64>::new(InverterConfig { depth: 1, channels: 2, msfa }, 11).unwrap();
        jitter_all(net.params_mut(), 12);
        let y = uniform(&mut rng(13), &[4, 4, 4], 0.0, 1.0);
        let got = net.forward_infer(&y).unwrap();
        let want = inverter_ref(net.params(), msfa, &y);
        assert!(max_abs_diff(got.data(), want.data()) < 1e-8, "msfa {msfa}");

        // Same weights at 32-bit precision.
        let mut narrow = Inverter::<f32>::new(InverterConfig { depth: 1, channels: 2, msfa }, 11).unwrap();
        narrow.params_mut().copy_values_from(&net.params().cast()).unwrap();
        let got32 = narrow.forward_infer(&y.cast()).unwrap().cast::<f64>();
        assert!(max_abs_diff(got32.data(), want.data()) < 1e-4);
    }
}

#[test]
pub fn inverter_shapes_and_divisibility() {
    let net = Inverter::<f32>::new(InverterConfig { depth: 4, channels: 2, msfa: true }, 0).unwrap();
    let mut trained = net.clone();
    // Inference needs running statistics; one training pass provides them.
    let (_, _) = trained.forward_train(&[Tensor::full(&[16, 16, 16], 0.3f32), Tensor::full(&[16, 16, 16], 0.6f32)]).unwrap();
    for e in [32, 64] {
        let y = Tensor::from_fn(&[e, e, e], |i| (i % 7) as f32 / 7.0);
        assert_eq!(trained.forward_infer(&y).unwrap().shape(), &[e, e, e]);
    }
    let err = trained.forward_infer(&Tensor::zeros(&[24, 24, 24])).unwrap_err();
    assert!(format!("{err}").contains("axis depth"), "{err}");
    let n2 = Inverter::<f32>::new(InverterConfig { depth: 2, channels: 8, msfa: true }, 0).unwrap();
    let mut n2t = n2.clone();
    n2t.forward_train(&[Tensor::full(&[32, 32, 32], 0.5f32)]).unwrap();
    assert_eq!(n2t.forward_infer(&Tensor::zeros(&[32, 32, 32])).unwrap().shape(), &[32, 32, 32]);
}

#[test]
pub fn msfa_widths_and_receptive_fields() {
    let on = Inverter::<f32>::new(InverterConfig { depth: 1, channels: 8, msfa: true }, 0).unwrap();
    let off = Inverter::<f32>::new(InverterConfig { depth: 1, channels: 8, msfa: false }, 0).unwrap();
    let pool_width = |n: &Inverter<f32>| n.layers().iter().find(|l| l.kind == LayerKind::MaxPool).unwrap().in_channels;
    assert_eq!(pool_width(&on), 24);
    assert_eq!(pool_width(&off), 8);
    assert_eq!(receptive_field(&[3, 3, 3], &[1, 1, 1]).unwrap(), vec![3, 5, 7]);
    let big_on = Inverter::<f32>::new(InverterConfig::default(), 0).unwrap();
    let big_off = Inverter::<f32>::new(InverterConfig { msfa: false, ..Default::default() }, 0).unwrap();
    assert!(count_parameters(&big_off) < count_parameters(&big_on));
}
