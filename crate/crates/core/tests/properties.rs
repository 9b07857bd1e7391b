mod common;

use common::*;
use proptest::prelude::*;
use voxinv_core::eval::{mre, psnr, ssim, SsimConstants};
use voxinv_core::forge::preprocess::{mean_subtraction, normalize01, resize_trilinear, time_zero_correction};
use voxinv_core::nets::{count_parameters, Denoiser, DenoiserConfig, Inverter, InverterConfig, Network};
use voxinv_core::ops::concat::{concat_channels, split_channels};
use voxinv_core::ops::conv::{conv3d, transposed_conv3d, ConvGeometry};
use voxinv_core::ops::pool::max_pool3d;
use voxinv_core::tensor::Tensor;
use voxinv_core::train::{split_indices, update_lr};

fn cfg() -> ProptestConfig {
    ProptestConfig { cases: 48, ..ProptestConfig::default() }
}

fn extent() -> impl Strategy<Value = [usize; 3]> {
    [1usize..5, 1usize..5, 1usize..5]
}

proptest! {
    #![proptest_config(cfg())]

    #[test]
    fn conv_is_homogeneous(seed in any::<u64>(), alpha in -5.0f64..5.0, e in extent()) {
        let mut r = rng(seed);
        let x = uniform(&mut r, &[2, e[0] + 1, e[1] + 1, e[2] + 1], -1.0, 1.0);
        let k = uniform(&mut r, &[3, 2, 3, 3, 3], -1.0, 1.0);
        let b = Tensor::zeros(&[3]);
        let y = conv3d(&x, &k, &b, &ConvGeometry::SAME3).unwrap();
        let ya = conv3d(&x.scale(alpha), &k, &b, &ConvGeometry::SAME3).unwrap();
        let scaled: Vec<f64> = y.data().iter().map(|v| v * alpha).collect();
        prop_assert!(max_abs_diff(ya.data(), &scaled) < 1e-12);
    }

    #[test]
    fn shape_algebra(e in extent(), c in 1usize..4) {
        let x = Tensor::<f64>::full(&[c, 2 * e[0], 2 * e[1], 2 * e[2]], 0.5);
        let same = conv3d(&x, &Tensor::full(&[2, c, 3, 3, 3], 0.1), &Tensor::zeros(&[2]), &ConvGeometry::SAME3).unwrap();
        prop_assert_eq!(same.shape(), &[2, 2 * e[0], 2 * e[1], 2 * e[2]]);
        let pooled = max_pool3d(&x).unwrap().output;
        prop_assert_eq!(pooled.shape(), &[c, e[0], e[1], e[2]]);
        let up = transposed_conv3d(&pooled, &Tensor::full(&[1, c, 2, 2, 2], 1.0), &Tensor::zeros(&[1]), &ConvGeometry::UP2).unwrap();
        prop_assert_eq!(up.shape(), &[1, 2 * e[0], 2 * e[1], 2 * e[2]]);
    }

    #[test]
    fn concat_then_split_is_identity(seed in any::<u64>(), counts in prop::collection::vec(1usize..4, 1..4), e in extent()) {
        let mut r = rng(seed);
        let parts: Vec<Tensor<f64>> = counts.iter().map(|&c| uniform(&mut r, &[c, e[0], e[1], e[2]], -1.0, 1.0)).collect();
        let refs: Vec<&Tensor<f64>> = parts.iter().collect();
        let back = split_channels(&concat_channels(&refs).unwrap(), &counts).unwrap();
        prop_assert_eq!(back, parts);
    }

    #[test]
    fn parameter_count_ignores_values(seed in any::<u64>(), m in 0usize..3) {
        let a = Denoiser::<f32>::new(DenoiserConfig { modules: m, channels: 4, reduction: 2 }, 0).unwrap();
        let b = Denoiser::<f32>::new(DenoiserConfig { modules: m, channels: 4, reduction: 2 }, seed).unwrap();
        prop_assert_eq!(count_parameters(&a), count_parameters(&b));
        let i = Inverter::<f32>::new(InverterConfig { depth: 2, channels: 2, msfa: true }, seed).unwrap();
        let j = Inverter::<f32>::new(InverterConfig { depth: 2, channels: 2, msfa: true }, seed ^ 1).unwrap();
        prop_assert_eq!(count_parameters(&i), count_parameters(&j));
    }

    #[test]
    fn denoiser_output_non_negative_and_attention_open(seed in any::<u64>(), d in 3usize..7, h in 3usize..7, w in 3usize..7) {
        let net = Denoiser::<f64>::new(DenoiserConfig { modules: 2, channels: 4, reduction: 2 }, seed).unwrap();
        let y = uniform(&mut rng(seed ^ 5), &[d, h, w], -1.0, 1.0);
        let t = net.trace(&y).unwrap();
        let out = net.forward_infer(&y).unwrap();
        prop_assert_eq!(out.shape(), &[d, h, w]);
        prop_assert!(out.data().iter().all(|&v| v >= 0.0));
        for m in &t.modules {
            prop_assert!(m.attention.data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn inverter_preserves_shape(seed in any::<u64>(), e in [1usize..4, 1usize..4, 1usize..4]) {
        let mut net = Inverter::<f64>::new(InverterConfig { depth: 2, channels: 2, msfa: seed % 2 == 0 }, seed).unwrap();
        let dims = [4 * e[0], 4 * e[1], 4 * e[2]];
        let y = uniform(&mut rng(seed), &dims, 0.0, 1.0);
        let (out, _) = net.forward_train(&[y.clone()]).unwrap();
        prop_assert_eq!(out[0].shape(), &dims);
        let inferred = net.forward_infer(&y).unwrap();
        prop_assert_eq!(inferred.shape(), &dims);
    }

    #[test]
    fn preprocessing_is_idempotent(seed in any::<u64>(), e in [2usize..8, 2usize..6, 2usize..6]) {
        let v = uniform(&mut rng(seed), &e, -3.0, 3.0);
        let m = mean_subtraction(&v).unwrap();
        prop_assert!(max_abs_diff(mean_subtraction(&m).unwrap().data(), m.data()) < 1e-6);
        let n = normalize01(&v).unwrap();
        prop_assert!(max_abs_diff(normalize01(&n).unwrap().data(), n.data()) < 1e-12);
        let same = resize_trilinear(&v, e).unwrap();
        prop_assert!(max_abs_diff(same.data(), v.data()) < 1e-6);
    }

    #[test]
    fn time_zero_round_trip(seed in any::<u64>(), t in 4usize..20, shift in 0usize..4) {
        prop_assume!(shift < t);
        let mut base = uniform(&mut rng(seed), &[t, 3, 3], -1.0, 1.0);
        base.data_mut()[..9].iter_mut().for_each(|v| *v += 10.0);
        let delayed = Tensor::from_fn(&[t, 3, 3], |i| if i / 9 < shift { 0.0 } else { base.data()[i - shift * 9] });
        let (back, s) = time_zero_correction(&delayed).unwrap();
        prop_assert_eq!(s, shift);
        let keep = (t - shift) * 9;
        prop_assert_eq!(&back.data()[..keep], &base.data()[..keep]);
    }

    #[test]
    fn ramp_survives_resizing(a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0, e in [3usize..9, 3usize..9, 3usize..9]) {
        let big = [2 * e[0] - 1, 2 * e[1] - 1, 2 * e[2] - 1];
        let ramp = |d: [usize; 3]| Tensor::from_fn(&d, |i| {
            let (z, y, x) = (i / (d[1] * d[2]), (i / d[2]) % d[1], i % d[2]);
            a * z as f64 / (d[0] - 1) as f64 + b * y as f64 / (d[1] - 1) as f64 + c * x as f64 / (d[2] - 1) as f64
        });
        let round = resize_trilinear(&resize_trilinear(&ramp(big), e).unwrap(), big).unwrap();
        prop_assert!(max_abs_diff(round.data(), ramp(big).data()) < 1e-6);
    }

    #[test]
    fn learning_rate_never_increases(losses in prop::collection::vec(0.0f64..10.0, 1..40)) {
        let mut lr = 0.001;
        for k in 1..=losses.len() {
            let next = update_lr(lr, &losses[..k], 0.98);
            prop_assert!(next <= lr);
            lr = next;
        }
    }

    #[test]
    fn split_partitions_indices(n in 2usize..200, frac in 0.1f64..0.95, seed in any::<u64>()) {
        let (tr, va) = split_indices(n, frac, seed).unwrap();
        prop_assert!(!tr.is_empty() && !va.is_empty());
        let mut all: Vec<usize> = tr.iter().chain(&va).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn ssim_is_symmetric(seed in any::<u64>(), e in extent(), range in 0.5f64..20.0) {
        let mut r = rng(seed);
        let a = uniform(&mut r, &e, 0.0, 1.0);
        let b = uniform(&mut r, &e, 0.0, 1.0);
        let k = SsimConstants::new(range).unwrap();
        prop_assert!((ssim(&a, &b, k).unwrap() - ssim(&b, &a, k).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn psnr_falls_as_error_grows(seed in any::<u64>(), e in extent()) {
        let mut r = rng(seed);
        let t = uniform(&mut r, &e, 0.0, 1.0);
        let err = uniform(&mut r, &e, 0.1, 1.0);
        let mut last = f64::INFINITY;
        for k in 1..10 {
            let a = k as f64 * 0.05;
            let p = Tensor::from_fn(&e, |i| t.data()[i] + a * err.data()[i]);
            let v = psnr(&t, &p).unwrap();
            prop_assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn mre_is_linear_in_error_scale(seed in any::<u64>(), e in extent(), alpha in -3.0f64..3.0) {
        let mut r = rng(seed);
        let t = uniform(&mut r, &e, 0.5, 1.0);
        let err = uniform(&mut r, &e, -1.0, 1.0);
        let at = |a: f64| mre(&t, &Tensor::from_fn(&e, |i| t.data()[i] + a * err.data()[i])).unwrap();
        prop_assert!((at(alpha) - alpha.abs() * at(1.0)).abs() < 1e-9);
    }
}
