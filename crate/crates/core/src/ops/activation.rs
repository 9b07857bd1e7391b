use serde::{Deserialize, Serialize};

use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Sigmoid,
    Linear,
}

#[inline]
pub fn relu<T: Real>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl Activation {
    pub fn apply<T: Real>(self, x: &Tensor<T>) -> Tensor<T> {
        match self {
            Activation::Relu => x.map(relu),
            Activation::Sigmoid => x.map(sigmoid),
            Activation::Linear => x.clone(),
        }
    }

    pub fn apply_in_place<T: Real>(self, x: &mut Tensor<T>) {
        match self {
            Activation::Relu => x.data_mut().iter_mut().for_each(|v| *v = relu(*v)),
            Activation::Sigmoid => x.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v)),
            Activation::Linear => {}
        }
    }

    /// Gradient w.r.t. the pre-activation, given the activation *output*.
    /// The ReLU subgradient at zero is zero.
    pub fn backward<T: Real>(self, output: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
        let mut g = grad_out.clone();
        self.backward_in_place(output, &mut g);
        g
    }

    pub fn backward_in_place<T: Real>(self, output: &Tensor<T>, grad: &mut Tensor<T>) {
        let y = output.data();
        match self {
            Activation::Relu => grad.data_mut().iter_mut().zip(y).for_each(|(g, &y)| {
                if y <= T::zero() {
                    *g = T::zero();
                }
            }),
            Activation::Sigmoid => grad
                .data_mut()
                .iter_mut()
                .zip(y)
                .for_each(|(g, &y)| *g *= y * (T::one() - y)),
            Activation::Linear => {}
        }
    }
}
