//! Naive loop references and small helpers shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voxinv_core::tensor::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn at(shape: &[usize], c: usize, z: usize, y: usize, x: usize) -> usize {
    ((c * shape[1] + z) * shape[2] + y) * shape[3] + x
}

/// Seven nested loops over output channel, voxel, input channel and tap.
pub fn conv3d_ref(x: &Tensor<f64>, k: &Tensor<f64>, b: &[f64], stride: usize, pad: usize) -> Tensor<f64> {
    let xs = x.shape();
    let ks = k.shape();
    let (co, ci, kd, kh, kw) = (ks[0], ks[1], ks[2], ks[3], ks[4]);
    let o = |e: usize, kk: usize| (e + 2 * pad - kk) / stride + 1;
    let (od, oh, ow) = (o(xs[1], kd), o(xs[2], kh), o(xs[3], kw));
    let mut out = vec![0.0; co * od * oh * ow];
    let os = [co, od, oh, ow];
    for c in 0..co {
        for z in 0..od {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut s = b[c];
                    for i in 0..ci {
                        for a in 0..kd {
                            for bb in 0..kh {
                                for cc in 0..kw {
                                    let iz = (z * stride + a) as isize - pad as isize;
                                    let iy = (y * stride + bb) as isize - pad as isize;
                                    let ix = (xx * stride + cc) as isize - pad as isize;
                                    if iz < 0 || iy < 0 || ix < 0 {
                                        continue;
                                    }
                                    let (iz, iy, ix) = (iz as usize, iy as usize, ix as usize);
                                    if iz >= xs[1] || iy >= xs[2] || ix >= xs[3] {
                                        continue;
                                    }
                                    let kv = k.data()[(((c * ci + i) * kd + a) * kh + bb) * kw + cc];
                                    s += kv * x.data()[at(xs, i, iz, iy, ix)];
                                }
                            }
                        }
                    }
                    out[at(&os, c, z, y, xx)] = s;
                }
            }
        }
    }
    Tensor::from_vec(&os, out).unwrap()
}

/// Scatter-add of every input voxel through the kernel.
pub fn tconv3d_ref(x: &Tensor<f64>, k: &Tensor<f64>, b: &[f64], stride: usize, pad: usize) -> Tensor<f64> {
    let xs = x.shape();
    let ks = k.shape();
    let (co, ci, kd, kh, kw) = (ks[0], ks[1], ks[2], ks[3], ks[4]);
    let o = |e: usize, kk: usize| (e - 1) * stride + kk - 2 * pad;
    let os = [co, o(xs[1], kd), o(xs[2], kh), o(xs[3], kw)];
    let mut out = vec![0.0; os.iter().product()];
    for c in 0..co {
        for z in 0..os[1] {
            for y in 0..os[2] {
                for xx in 0..os[3] {
                    out[at(&os, c, z, y, xx)] = b[c];
                }
            }
        }
    }
    for c in 0..co {
        for i in 0..ci {
            for z in 0..xs[1] {
                for y in 0..xs[2] {
                    for xx in 0..xs[3] {
                        for a in 0..kd {
                            for bb in 0..kh {
                                for cc in 0..kw {
                                    let oz = (z * stride + a) as isize - pad as isize;
                                    let oy = (y * stride + bb) as isize - pad as isize;
                                    let ox = (xx * stride + cc) as isize - pad as isize;
                                    if oz < 0 || oy < 0 || ox < 0 {
                                        continue;
                                    }
                                    let (oz, oy, ox) = (oz as usize, oy as usize, ox as usize);
                                    if oz >= os[1] || oy >= os[2] || ox >= os[3] {
                                        continue;
                                    }
                                    let kv = k.data()[(((c * ci + i) * kd + a) * kh + bb) * kw + cc];
                                    out[at(&os, c, oz, oy, ox)] += kv * x.data()[at(xs, i, z, y, xx)];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&os, out).unwrap()
}

pub fn max_pool_ref(x: &Tensor<f64>) -> Tensor<f64> {
    let s = x.shape();
    let os = [s[0], s[1] / 2, s[2] / 2, s[3] / 2];
    let mut out = vec![f64::NEG_INFINITY; os.iter().product()];
    for c in 0..s[0] {
        for z in 0..s[1] {
            for y in 0..s[2] {
                for xx in 0..s[3] {
                    let o = &mut out[at(&os, c, z / 2, y / 2, xx / 2)];
                    *o = o.max(x.data()[at(s, c, z, y, xx)]);
                }
            }
        }
    }
    Tensor::from_vec(&os, out).unwrap()
}

pub fn gap_ref(x: &Tensor<f64>) -> Vec<f64> {
    let s = x.shape();
    (0..s[0])
        .map(|c| {
            let mut sum = 0.0;
            for z in 0..s[1] {
                for y in 0..s[2] {
                    for xx in 0..s[3] {
                        sum += x.data()[at(s, c, z, y, xx)];
                    }
                }
            }
            sum / (s[1] * s[2] * s[3]) as f64
        })
        .collect()
}

pub fn fc_ref(x: &[f64], w: &Tensor<f64>, b: &[f64]) -> Vec<f64> {
    let (o, i) = (w.shape()[0], w.shape()[1]);
    (0..o)
        .map(|r| {
            let mut s = b[r];
            for c in 0..i {
                s += w.data()[r * i + c] * x[c];
            }
            s
        })
        .collect()
}

/// Inference-mode batch norm with explicit statistics.
pub fn bn_ref(x: &Tensor<f64>, gamma: &[f64], beta: &[f64], mean: &[f64], var: &[f64], eps: f64) -> Tensor<f64> {
    let per = x.len() / x.shape()[0];
    Tensor::from_fn(x.shape(), |i| {
        let c = i / per;
        gamma[c] * (x.data()[i] - mean[c]) / (var[c] + eps).sqrt() + beta[c]
    })
}

pub fn relu_ref(x: &Tensor<f64>) -> Tensor<f64> {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

pub fn add_ref(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    Tensor::from_fn(a.shape(), |i| a.data()[i] + b.data()[i])
}

pub fn concat_ref(parts: &[&Tensor<f64>]) -> Tensor<f64> {
    let s = parts[0].shape();
    let c: usize = parts.iter().map(|p| p.shape()[0]).sum();
    let data: Vec<f64> = parts.iter().flat_map(|p| p.data().iter().copied()).collect();
    Tensor::from_vec(&[c, s[1], s[2], s[3]], data).unwrap()
}

/// Global-statistics structural similarity, written out term by term.
pub fn ssim_ref(t: &[f64], p: &[f64], range: f64) -> f64 {
    let n = t.len() as f64;
    let mut mt = 0.0;
    let mut mp = 0.0;
    for i in 0..t.len() {
        mt += t[i];
        mp += p[i];
    }
    mt /= n;
    mp /= n;
    let mut vt = 0.0;
    let mut vp = 0.0;
    let mut cv = 0.0;
    for i in 0..t.len() {
        vt += (t[i] - mt) * (t[i] - mt);
        vp += (p[i] - mp) * (p[i] - mp);
        cv += (t[i] - mt) * (p[i] - mp);
    }
    vt /= n;
    vp /= n;
    cv /= n;
    let c1 = (0.01 * range) * (0.01 * range);
    let c2 = (0.03 * range) * (0.03 * range);
    (2.0 * mt * mp + c1) * (2.0 * cv + c2) / ((mt * mt + mp * mp + c1) * (vt + vp + c2))
}
