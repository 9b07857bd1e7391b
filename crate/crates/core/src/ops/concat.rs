use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Stacks `C_i×D×H×W` maps along the channel axis in argument order.
pub fn concat_channels<T: Real>(inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::InvalidShape("concat of zero tensors".into()))?;
    let (_, d, h, w) = first.dims4()?;
    let mut channels = 0;
    for t in inputs {
        let (c, td, th, tw) = t.dims4()?;
        for (axis, e, a) in [("depth", d, td), ("height", h, th), ("width", w, tw)] {
            if e != a {
                return Err(Error::ShapeMismatch {
                    axis,
                    expected: e,
                    actual: a,
                });
            }
        }
        channels += c;
    }
    let mut data = Vec::with_capacity(channels * d * h * w);
    for t in inputs {
        data.extend_from_slice(t.data());
    }
    Tensor::from_vec(&[channels, d, h, w], data)
}

/// Inverse of [`concat_channels`]: slices a map into blocks of the given
/// channel counts.
pub fn split_channels<T: Real>(input: &Tensor<T>, counts: &[usize]) -> Result<Vec<Tensor<T>>> {
    let (c, d, h, w) = input.dims4()?;
    let total: usize = counts.iter().sum();
    if total != c {
        return Err(Error::ShapeMismatch {
            axis: "channel",
            expected: c,
            actual: total,
        });
    }
    let per = d * h * w;
    let mut start = 0;
    counts
        .iter()
        .map(|&n| {
            let t = Tensor::from_vec(&[n, d, h, w], input.data()[start * per..(start + n) * per].to_vec());
            start += n;
            t
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_blocks_of_eight() {
        let parts: Vec<Tensor<f64>> = (0..3)
            .map(|k| Tensor::from_fn(&[8, 2, 2, 2], |i| (i + 100 * k) as f64))
            .collect();
        let refs: Vec<&Tensor<f64>> = parts.iter().collect();
        let cat = concat_channels(&refs).unwrap();
        assert_eq!(cat.shape(), &[24, 2, 2, 2]);
        assert_eq!(&cat.data()[..64], parts[0].data());
        let back = split_channels(&cat, &[8, 8, 8]).unwrap();
        assert_eq!(back, parts);
    }

    #[test]
    fn spatial_mismatch() {
        let a = Tensor::<f64>::zeros(&[1, 2, 2, 2]);
        let b = Tensor::<f64>::zeros(&[1, 2, 3, 2]);
        assert!(matches!(concat_channels(&[&a, &b]), Err(Error::ShapeMismatch { axis: "height", .. })));
    }
}
