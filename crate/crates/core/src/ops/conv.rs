//! 3D convolution and transposed convolution with analytic backward passes.
//!
//! Kernels are laid out `C_out×C_in×kD×kH×kW` for both operations. The
//! unit-stride convolution runs row-by-row so the innermost loop is a
//! contiguous axpy that the compiler can vectorize; other geometries fall
//! back to plain index loops.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::for_each_chunk_mut;
use crate::scalar::Real;
use crate::tensor::Tensor;

const AXES: [&str; 3] = ["depth", "height", "width"];

/// Stride and zero padding per spatial axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl ConvGeometry {
    pub const fn new(stride: usize, padding: usize) -> Self {
        Self {
            stride: [stride; 3],
            padding: [padding; 3],
        }
    }

    /// `k=3, s=1, p=1`: shape-preserving convolution.
    pub const SAME3: Self = Self::new(1, 1);
    /// `k=2, s=2, p=0`: non-overlapping up/down sampling.
    pub const UP2: Self = Self::new(2, 0);
}

/// Kernels, bias and geometry of one convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    pub kernels: Tensor<T>,
    pub bias: Tensor<T>,
    pub geometry: ConvGeometry,
}

/// Gradients returned by the allocating backward helpers.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub kernels: Tensor<T>,
    pub bias: Tensor<T>,
}

fn kernel_dims<T: Real>(kernels: &Tensor<T>) -> Result<(usize, usize, [usize; 3])> {
    match *kernels.shape() {
        [co, ci, kd, kh, kw] => {
            if kd == 0 || kh == 0 || kw == 0 {
                return Err(Error::InvalidShape("kernel extent must be >= 1".into()));
            }
            Ok((co, ci, [kd, kh, kw]))
        }
        _ => Err(Error::InvalidShape(alloc::format!(
            "kernel must be C_out×C_in×kD×kH×kW, got {:?}",
            kernels.shape()
        ))),
    }
}

fn check_geometry(g: &ConvGeometry) -> Result<()> {
    if g.stride.iter().any(|&s| s == 0) {
        return Err(Error::InvalidConfig("stride must be >= 1".into()));
    }
    Ok(())
}

/// Output extents of a convolution.
pub fn conv_output_dims(input: [usize; 3], kernel: [usize; 3], g: &ConvGeometry) -> Result<[usize; 3]> {
    let mut out = [0; 3];
    for a in 0..3 {
        let padded = input[a] + 2 * g.padding[a];
        if padded < kernel[a] {
            return Err(Error::ShapeMismatch {
                axis: AXES[a],
                expected: kernel[a],
                actual: padded,
            });
        }
        out[a] = (padded - kernel[a]) / g.stride[a] + 1;
    }
    Ok(out)
}

/// Output extents of a transposed convolution: `(E-1)·s + k - 2p`.
pub fn tconv_output_dims(input: [usize; 3], kernel: [usize; 3], g: &ConvGeometry) -> Result<[usize; 3]> {
    let mut out = [0; 3];
    for a in 0..3 {
        if input[a] == 0 {
            return Err(Error::InvalidShape("empty spatial extent".into()));
        }
        let full = (input[a] - 1) * g.stride[a] + kernel[a];
        if full <= 2 * g.padding[a] {
            return Err(Error::ShapeMismatch {
                axis: AXES[a],
                expected: 2 * g.padding[a] + 1,
                actual: full,
            });
        }
        out[a] = full - 2 * g.padding[a];
    }
    Ok(out)
}

fn check_bias<T: Real>(bias: &Tensor<T>, co: usize) -> Result<()> {
    if bias.len() != co {
        return Err(Error::ShapeMismatch {
            axis: "bias",
            expected: co,
            actual: bias.len(),
        });
    }
    Ok(())
}

fn check_in_channels(actual: usize, expected: usize) -> Result<()> {
    if actual != expected {
        return Err(Error::ShapeMismatch {
            axis: "channel",
            expected,
            actual,
        });
    }
    Ok(())
}

/// Output positions `o` with `0 <= o + k - p < extent` for unit stride.
#[inline]
fn valid_range(k: usize, p: usize, extent: usize, out_extent: usize) -> (usize, usize) {
    let lo = p.saturating_sub(k);
    let hi = (extent + p).saturating_sub(k).min(out_extent);
    (lo, hi.max(lo))
}

#[inline]
fn axpy<T: Real>(y: &mut [T], a: T, x: &[T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn mul_acc<T: Real>(acc: &mut [T], a: &[T], b: &[T]) {
    for ((s, &x), &y) in acc.iter_mut().zip(a).zip(b) {
        *s += x * y;
    }
}

/// Forward 3D convolution (cross-correlation) of a `C_in×D×H×W` input.
pub fn conv3d<T: Real>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    geometry: &ConvGeometry,
) -> Result<Tensor<T>> {
    check_geometry(geometry)?;
    let (cin, d, h, w) = input.dims4()?;
    let (co, kci, ks) = kernel_dims(kernels)?;
    check_in_channels(cin, kci)?;
    check_bias(bias, co)?;
    let od = conv_output_dims([d, h, w], ks, geometry)?;
    let per_out = od[0] * od[1] * od[2];
    let mut out = Tensor::zeros(&[co, od[0], od[1], od[2]]);
    let x = input.data();
    let kd = kernels.data();
    let b = bias.data();
    let unit = geometry.stride == [1, 1, 1];
    let p = geometry.padding;
    let kvol = ks[0] * ks[1] * ks[2];
    let in_vol = d * h * w;

    for_each_chunk_mut(out.data_mut(), per_out, |c, oc| {
        oc.iter_mut().for_each(|v| *v = b[c]);
        for ci in 0..cin {
            let xin = &x[ci * in_vol..(ci + 1) * in_vol];
            let kbase = (c * cin + ci) * kvol;
            for a in 0..ks[0] {
                for bb in 0..ks[1] {
                    for cc in 0..ks[2] {
                        let wgt = kd[kbase + (a * ks[1] + bb) * ks[2] + cc];
                        if unit {
                            let (d0, d1) = valid_range(a, p[0], d, od[0]);
                            let (h0, h1) = valid_range(bb, p[1], h, od[1]);
                            let (w0, w1) = valid_range(cc, p[2], w, od[2]);
                            if w0 >= w1 {
                                continue;
                            }
                            for o_d in d0..d1 {
                                let id = o_d + a - p[0];
                                for o_h in h0..h1 {
                                    let ih = o_h + bb - p[1];
                                    let orow = (o_d * od[1] + o_h) * od[2];
                                    let irow = (id * h + ih) * w + w0 + cc - p[2];
                                    axpy(&mut oc[orow + w0..orow + w1], wgt, &xin[irow..irow + (w1 - w0)]);
                                }
                            }
                        } else {
                            strided_fwd(xin, [d, h, w], oc, od, [a, bb, cc], geometry, wgt);
                        }
                    }
                }
            }
        }
    });
    Ok(out)
}

fn strided_fwd<T: Real>(
    xin: &[T],
    [d, h, w]: [usize; 3],
    oc: &mut [T],
    od: [usize; 3],
    k: [usize; 3],
    g: &ConvGeometry,
    wgt: T,
) {
    for o_d in 0..od[0] {
        let Some(id) = (o_d * g.stride[0] + k[0]).checked_sub(g.padding[0]).filter(|&i| i < d) else {
            continue;
        };
        for o_h in 0..od[1] {
            let Some(ih) = (o_h * g.stride[1] + k[1]).checked_sub(g.padding[1]).filter(|&i| i < h) else {
                continue;
            };
            for o_w in 0..od[2] {
                let Some(iw) = (o_w * g.stride[2] + k[2]).checked_sub(g.padding[2]).filter(|&i| i < w) else {
                    continue;
                };
                oc[(o_d * od[1] + o_h) * od[2] + o_w] += wgt * xin[(id * h + ih) * w + iw];
            }
        }
    }
}

/// Backward pass of [`conv3d`].
///
/// Kernel and bias gradients are accumulated into `grad_kernels` and
/// `grad_bias`; the input gradient is returned when `want_input` is set.
pub fn conv3d_backward<T: Real>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    geometry: &ConvGeometry,
    grad_out: &Tensor<T>,
    grad_kernels: &mut [T],
    grad_bias: &mut [T],
    want_input: bool,
) -> Result<Option<Tensor<T>>> {
    check_geometry(geometry)?;
    let (cin, d, h, w) = input.dims4()?;
    let (co, kci, ks) = kernel_dims(kernels)?;
    check_in_channels(cin, kci)?;
    let od = conv_output_dims([d, h, w], ks, geometry)?;
    let expect = [co, od[0], od[1], od[2]];
    if grad_out.shape() != expect {
        return Err(Error::InvalidShape(alloc::format!(
            "gradient shape {:?} does not match conv output {:?}",
            grad_out.shape(),
            expect
        )));
    }
    let kvol = ks[0] * ks[1] * ks[2];
    if grad_kernels.len() != kernels.len() || grad_bias.len() != co {
        return Err(Error::InvalidShape("gradient buffers do not match parameters".into()));
    }
    let p = geometry.padding;
    let unit = geometry.stride == [1, 1, 1];
    let per_out = od[0] * od[1] * od[2];
    let in_vol = d * h * w;
    let x = input.data();
    let gy = grad_out.data();
    let kdat = kernels.data();

    for (c, gb) in grad_bias.iter_mut().enumerate() {
        *gb += gy[c * per_out..(c + 1) * per_out].iter().copied().sum::<T>();
    }

    // Kernel gradient, one output channel per chunk.
    for_each_chunk_mut(grad_kernels, cin * kvol, |c, gk| {
        let gyc = &gy[c * per_out..(c + 1) * per_out];
        let mut acc = vec![T::zero(); od[2]];
        for ci in 0..cin {
            let xin = &x[ci * in_vol..(ci + 1) * in_vol];
            for a in 0..ks[0] {
                for bb in 0..ks[1] {
                    for cc in 0..ks[2] {
                        let slot = &mut gk[ci * kvol + (a * ks[1] + bb) * ks[2] + cc];
                        if unit {
                            let (d0, d1) = valid_range(a, p[0], d, od[0]);
                            let (h0, h1) = valid_range(bb, p[1], h, od[1]);
                            let (w0, w1) = valid_range(cc, p[2], w, od[2]);
                            if w0 >= w1 {
                                continue;
                            }
                            let acc = &mut acc[..w1 - w0];
                            acc.iter_mut().for_each(|v| *v = T::zero());
                            for o_d in d0..d1 {
                                let id = o_d + a - p[0];
                                for o_h in h0..h1 {
                                    let ih = o_h + bb - p[1];
                                    let orow = (o_d * od[1] + o_h) * od[2];
                                    let irow = (id * h + ih) * w + w0 + cc - p[2];
                                    mul_acc(acc, &gyc[orow + w0..orow + w1], &xin[irow..irow + (w1 - w0)]);
                                }
                            }
                            *slot += acc.iter().copied().sum::<T>();
                        } else {
                            let mut s = T::zero();
                            for_each_tap(geometry, [d, h, w], od, [a, bb, cc], |oi, ii| {
                                s += gyc[oi] * xin[ii];
                            });
                            *slot += s;
                        }
                    }
                }
            }
        }
    });

    if !want_input {
        return Ok(None);
    }
    let mut gx = Tensor::zeros(&[cin, d, h, w]);
    for_each_chunk_mut(gx.data_mut(), in_vol, |ci, gxc| {
        for c in 0..co {
            let gyc = &gy[c * per_out..(c + 1) * per_out];
            let kbase = (c * cin + ci) * kvol;
            for a in 0..ks[0] {
                for bb in 0..ks[1] {
                    for cc in 0..ks[2] {
                        let wgt = kdat[kbase + (a * ks[1] + bb) * ks[2] + cc];
                        if unit {
                            let (d0, d1) = valid_range(a, p[0], d, od[0]);
                            let (h0, h1) = valid_range(bb, p[1], h, od[1]);
                            let (w0, w1) = valid_range(cc, p[2], w, od[2]);
                            if w0 >= w1 {
                                continue;
                            }
                            for o_d in d0..d1 {
                                let id = o_d + a - p[0];
                                for o_h in h0..h1 {
                                    let ih = o_h + bb - p[1];
                                    let orow = (o_d * od[1] + o_h) * od[2];
                                    let irow = (id * h + ih) * w + w0 + cc - p[2];
                                    axpy(&mut gxc[irow..irow + (w1 - w0)], wgt, &gyc[orow + w0..orow + w1]);
                                }
                            }
                        } else {
                            for_each_tap(geometry, [d, h, w], od, [a, bb, cc], |oi, ii| {
                                gxc[ii] += wgt * gyc[oi];
                            });
                        }
                    }
                }
            }
        }
    });
    Ok(Some(gx))
}

/// Visits `(output index, input index)` pairs joined by kernel tap `k`.
#[inline]
fn for_each_tap(g: &ConvGeometry, [d, h, w]: [usize; 3], od: [usize; 3], k: [usize; 3], mut f: impl FnMut(usize, usize)) {
    for o_d in 0..od[0] {
        let Some(id) = (o_d * g.stride[0] + k[0]).checked_sub(g.padding[0]).filter(|&i| i < d) else {
            continue;
        };
        for o_h in 0..od[1] {
            let Some(ih) = (o_h * g.stride[1] + k[1]).checked_sub(g.padding[1]).filter(|&i| i < h) else {
                continue;
            };
            for o_w in 0..od[2] {
                let Some(iw) = (o_w * g.stride[2] + k[2]).checked_sub(g.padding[2]).filter(|&i| i < w) else {
                    continue;
                };
                f((o_d * od[1] + o_h) * od[2] + o_w, (id * h + ih) * w + iw);
            }
        }
    }
}

/// Forward transposed convolution (scatter-add of every input voxel through
/// the kernel). With `k = s` each output voxel receives one contribution.
pub fn transposed_conv3d<T: Real>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    geometry: &ConvGeometry,
) -> Result<Tensor<T>> {
    check_geometry(geometry)?;
    let (cin, d, h, w) = input.dims4()?;
    let (co, kci, ks) = kernel_dims(kernels)?;
    check_in_channels(cin, kci)?;
    check_bias(bias, co)?;
    let od = tconv_output_dims([d, h, w], ks, geometry)?;
    let per_out = od[0] * od[1] * od[2];
    let in_vol = d * h * w;
    let kvol = ks[0] * ks[1] * ks[2];
    let x = input.data();
    let kd = kernels.data();
    let b = bias.data();
    let mut out = Tensor::zeros(&[co, od[0], od[1], od[2]]);
    for_each_chunk_mut(out.data_mut(), per_out, |c, oc| {
        oc.iter_mut().for_each(|v| *v = b[c]);
        for ci in 0..cin {
            let xin = &x[ci * in_vol..(ci + 1) * in_vol];
            let kbase = (c * cin + ci) * kvol;
            for a in 0..ks[0] {
                for bb in 0..ks[1] {
                    for cc in 0..ks[2] {
                        let wgt = kd[kbase + (a * ks[1] + bb) * ks[2] + cc];
                        // Input voxel i lands on output voxel i·s + k - p.
                        for_each_tap(geometry, od, [d, h, w], [a, bb, cc], |ii, oi| {
                            oc[oi] += wgt * xin[ii];
                        });
                    }
                }
            }
        }
    });
    Ok(out)
}

/// Backward pass of [`transposed_conv3d`], accumulating parameter gradients.
pub fn transposed_conv3d_backward<T: Real>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    geometry: &ConvGeometry,
    grad_out: &Tensor<T>,
    grad_kernels: &mut [T],
    grad_bias: &mut [T],
    want_input: bool,
) -> Result<Option<Tensor<T>>> {
    check_geometry(geometry)?;
    let (cin, d, h, w) = input.dims4()?;
    let (co, kci, ks) = kernel_dims(kernels)?;
    check_in_channels(cin, kci)?;
    let od = tconv_output_dims([d, h, w], ks, geometry)?;
    if grad_out.shape() != [co, od[0], od[1], od[2]] {
        return Err(Error::InvalidShape("gradient shape does not match transposed conv output".into()));
    }
    if grad_kernels.len() != kernels.len() || grad_bias.len() != co {
        return Err(Error::InvalidShape("gradient buffers do not match parameters".into()));
    }
    let per_out = od[0] * od[1] * od[2];
    let in_vol = d * h * w;
    let kvol = ks[0] * ks[1] * ks[2];
    let x = input.data();
    let gy = grad_out.data();
    let kdat = kernels.data();

    for (c, gb) in grad_bias.iter_mut().enumerate() {
        *gb += gy[c * per_out..(c + 1) * per_out].iter().copied().sum::<T>();
    }
    for_each_chunk_mut(grad_kernels, cin * kvol, |c, gk| {
        let gyc = &gy[c * per_out..(c + 1) * per_out];
        for ci in 0..cin {
            let xin = &x[ci * in_vol..(ci + 1) * in_vol];
            for a in 0..ks[0] {
                for bb in 0..ks[1] {
                    for cc in 0..ks[2] {
                        let mut s = T::zero();
                        for_each_tap(geometry, od, [d, h, w], [a, bb, cc], |ii, oi| {
                            s += xin[ii] * gyc[oi];
                        });
                        gk[ci * kvol + (a * ks[1] + bb) * ks[2] + cc] += s;
                    }
                }
            }
        }
    });
    if !want_input {
        return Ok(None);
    }
    let mut gx = Tensor::zeros(&[cin, d, h, w]);
    for_each_chunk_mut(gx.data_mut(), in_vol, |ci, gxc| {
        for c in 0..co {
            let gyc = &gy[c * per_out..(c + 1) * per_out];
            let kbase = (c * cin + ci) * kvol;
            for a in 0..ks[0] {
                for bb in 0..ks[1] {
                    for cc in 0..ks[2] {
                        let wgt = kdat[kbase + (a * ks[1] + bb) * ks[2] + cc];
                        for_each_tap(geometry, od, [d, h, w], [a, bb, cc], |ii, oi| {
                            gxc[ii] += wgt * gyc[oi];
                        });
                    }
                }
            }
        }
    });
    Ok(Some(gx))
}

impl<T: Real> ConvParams<T> {
    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        conv3d(input, &self.kernels, &self.bias, &self.geometry)
    }

    pub fn backward(&self, input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<ConvGrads<T>> {
        let mut gk = vec![T::zero(); self.kernels.len()];
        let mut gb = vec![T::zero(); self.bias.len()];
        let gx = conv3d_backward(input, &self.kernels, &self.geometry, grad_out, &mut gk, &mut gb, true)?
            .expect("input gradient requested");
        Ok(self.pack(gx, gk, gb))
    }

    pub fn forward_transposed(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        transposed_conv3d(input, &self.kernels, &self.bias, &self.geometry)
    }

    pub fn backward_transposed(&self, input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<ConvGrads<T>> {
        let mut gk = vec![T::zero(); self.kernels.len()];
        let mut gb = vec![T::zero(); self.bias.len()];
        let gx = transposed_conv3d_backward(input, &self.kernels, &self.geometry, grad_out, &mut gk, &mut gb, true)?
            .expect("input gradient requested");
        Ok(self.pack(gx, gk, gb))
    }

    fn pack(&self, input: Tensor<T>, gk: Vec<T>, gb: Vec<T>) -> ConvGrads<T> {
        ConvGrads {
            input,
            kernels: Tensor::from_vec(self.kernels.shape(), gk).expect("same length"),
            bias: Tensor::from_vec(self.bias.shape(), gb).expect("same length"),
        }
    }
}
