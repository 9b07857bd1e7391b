//! Fully connected layer on channel vectors.

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

fn dims<T: Real>(x: &Tensor<T>, weights: &Tensor<T>) -> Result<(usize, usize)> {
    let [out, inp] = *weights.shape() else {
        return Err(Error::InvalidShape("weights must be C_out×C_in".into()));
    };
    if x.len() != inp {
        return Err(Error::ShapeMismatch {
            axis: "input",
            expected: inp,
            actual: x.len(),
        });
    }
    Ok((out, inp))
}

/// `y = W x + b`.
pub fn fully_connected<T: Real>(x: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (out, inp) = dims(x, weights)?;
    if bias.len() != out {
        return Err(Error::ShapeMismatch {
            axis: "bias",
            expected: out,
            actual: bias.len(),
        });
    }
    let w = weights.data();
    let y = (0..out)
        .map(|o| {
            let row = &w[o * inp..(o + 1) * inp];
            bias.data()[o] + row.iter().zip(x.data()).map(|(&a, &b)| a * b).sum::<T>()
        })
        .collect();
    Tensor::from_vec(&[out], y)
}

/// Accumulates weight and bias gradients and returns the input gradient.
pub fn fully_connected_backward<T: Real>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
    grad_weights: &mut [T],
    grad_bias: &mut [T],
) -> Result<Tensor<T>> {
    let (out, inp) = dims(x, weights)?;
    if grad_out.len() != out {
        return Err(Error::ShapeMismatch {
            axis: "output",
            expected: out,
            actual: grad_out.len(),
        });
    }
    let w = weights.data();
    let gy = grad_out.data();
    let mut gx = Tensor::zeros(&[inp]);
    for o in 0..out {
        grad_bias[o] += gy[o];
        for i in 0..inp {
            grad_weights[o * inp + i] += gy[o] * x.data()[i];
            gx.data_mut()[i] += w[o * inp + i] * gy[o];
        }
    }
    Ok(gx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_return_bias() {
        let x = Tensor::<f64>::from_vec(&[3], vec![1.0, -2.0, 3.0]).unwrap();
        let b = Tensor::from_vec(&[2], vec![0.5, -0.25]).unwrap();
        let y = fully_connected(&x, &Tensor::zeros(&[2, 3]), &b).unwrap();
        assert_eq!(y.data(), b.data());
    }

    #[test]
    fn identity_weights_return_input() {
        let x = Tensor::<f64>::from_vec(&[3], vec![1.0, -2.0, 3.0]).unwrap();
        let eye = Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        let y = fully_connected(&x, &eye, &Tensor::zeros(&[3])).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn dimension_mismatch() {
        let x = Tensor::<f64>::zeros(&[4]);
        assert!(fully_connected(&x, &Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2])).is_err());
    }
}
