//! Per-channel rescaling by an attention vector.

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

fn check<T: Real>(x: &Tensor<T>, weights: &Tensor<T>) -> Result<usize> {
    let (c, _, _, _) = x.dims4()?;
    if weights.len() != c {
        return Err(Error::ShapeMismatch {
            axis: "channel",
            expected: c,
            actual: weights.len(),
        });
    }
    Ok(c)
}

/// `out[c] = weights[c] * x[c]`.
pub fn scale_channels<T: Real>(x: &Tensor<T>, weights: &Tensor<T>) -> Result<Tensor<T>> {
    let c = check(x, weights)?;
    let mut out = x.clone();
    for ch in 0..c {
        let a = weights.data()[ch];
        out.channel_mut(ch).iter_mut().for_each(|v| *v *= a);
    }
    Ok(out)
}

/// Returns `(grad_x, grad_weights)`.
pub fn scale_channels_backward<T: Real>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let c = check(x, weights)?;
    x.check_same_shape(grad_out)?;
    let gx = scale_channels(grad_out, weights)?;
    let gw = Tensor::from_fn(&[c], |ch| {
        grad_out.channel(ch).iter().zip(x.channel(ch)).map(|(&g, &v)| g * v).sum()
    });
    Ok((gx, gw))
}
