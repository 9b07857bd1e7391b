//! Max pooling and global average pooling.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::{axis_name, Tensor};

/// Output of [`max_pool3d`]: pooled values plus the flat input index of
/// each block maximum, used to route gradients.
#[derive(Debug, Clone)]
pub struct MaxPoolOutput<T> {
    pub output: Tensor<T>,
    pub argmax: Vec<usize>,
}

/// 2×2×2 max pooling with stride 2. Ties resolve to the first element of the
/// block in row-major order.
pub fn max_pool3d<T: Real>(input: &Tensor<T>) -> Result<MaxPoolOutput<T>> {
    let (c, d, h, w) = input.dims4()?;
    for (i, e) in [d, h, w].into_iter().enumerate() {
        if e % 2 != 0 || e == 0 {
            return Err(Error::NotDivisible {
                axis: axis_name(4, i + 1),
                extent: e,
                divisor: 2,
            });
        }
    }
    let (od, oh, ow) = (d / 2, h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(c * od * oh * ow);
    let mut argmax = Vec::with_capacity(out.capacity());
    for ch in 0..c {
        let base = ch * d * h * w;
        for a in 0..od {
            for b in 0..oh {
                for e in 0..ow {
                    let mut best_i = base + ((2 * a) * h + 2 * b) * w + 2 * e;
                    let mut best = x[best_i];
                    for da in 0..2 {
                        for db in 0..2 {
                            for de in 0..2 {
                                let i = base + ((2 * a + da) * h + 2 * b + db) * w + 2 * e + de;
                                if x[i] > best {
                                    best = x[i];
                                    best_i = i;
                                }
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_i);
                }
            }
        }
    }
    Ok(MaxPoolOutput {
        output: Tensor::from_vec(&[c, od, oh, ow], out)?,
        argmax,
    })
}

/// Routes each pooled gradient to its block's argmax.
pub fn max_pool3d_backward<T: Real>(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if grad_out.len() != argmax.len() {
        return Err(Error::ShapeMismatch {
            axis: "pooled",
            expected: argmax.len(),
            actual: grad_out.len(),
        });
    }
    let mut gx = Tensor::zeros(input_shape);
    let g = gx.data_mut();
    for (&i, &v) in argmax.iter().zip(grad_out.data()) {
        g[i] += v;
    }
    Ok(gx)
}

/// Per-channel mean over all voxels: `C×D×H×W -> C`.
pub fn global_avg_pool<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, d, h, w) = input.dims4()?;
    let n = d * h * w;
    if n == 0 {
        return Err(Error::InvalidShape("global average pool over an empty volume".into()));
    }
    let inv = T::one() / T::of(n as f64);
    Tensor::from_vec(&[c], (0..c).map(|ch| input.channel(ch).iter().copied().sum::<T>() * inv).collect())
}

pub fn global_avg_pool_backward<T: Real>(input_shape: &[usize], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let c = input_shape[0];
    let n: usize = input_shape[1..].iter().product();
    if grad_out.len() != c {
        return Err(Error::ShapeMismatch {
            axis: "channel",
            expected: c,
            actual: grad_out.len(),
        });
    }
    let inv = T::one() / T::of(n as f64);
    let mut gx = Tensor::zeros(input_shape);
    for ch in 0..c {
        let g = grad_out.data()[ch] * inv;
        gx.channel_mut(ch).iter_mut().for_each(|v| *v = g);
    }
    Ok(gx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_of_one_to_eight_pools_to_eight() {
        let x = Tensor::<f64>::from_fn(&[1, 2, 2, 2], |i| (i + 1) as f64);
        let p = max_pool3d(&x).unwrap();
        assert_eq!(p.output.data(), &[8.0]);
        assert_eq!(p.argmax, vec![7]);
        let gap = global_avg_pool(&x).unwrap();
        assert_eq!(gap.data(), &[4.5]);
    }

    #[test]
    fn constant_input_is_preserved() {
        let x = Tensor::<f64>::full(&[2, 4, 4, 4], 3.25);
        assert!(max_pool3d(&x).unwrap().output.data().iter().all(|&v| v == 3.25));
        assert_eq!(global_avg_pool(&x).unwrap().data(), &[3.25, 3.25]);
    }

    #[test]
    fn ties_route_to_first_occurrence() {
        let x = Tensor::<f64>::full(&[1, 2, 2, 2], 1.0);
        let p = max_pool3d(&x).unwrap();
        let g = max_pool3d_backward(x.shape(), &p.argmax, &Tensor::full(&[1, 1, 1, 1], 1.0)).unwrap();
        assert_eq!(g.data()[0], 1.0);
        assert_eq!(g.sum(), 1.0);
    }

    #[test]
    fn odd_extent_is_rejected() {
        let x = Tensor::<f64>::zeros(&[1, 4, 3, 4]);
        assert!(matches!(max_pool3d(&x), Err(Error::NotDivisible { axis: "height", .. })));
    }
}
