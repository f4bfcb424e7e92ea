use serde::{Deserialize, Serialize};

use super::{Real, Tensor};
use crate::error::Result;

/// Nonlinearity applied after a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub fn forward<T: Real>(self, x: &Tensor<T>) -> Tensor<T> {
        match self {
            Activation::Relu => relu_forward(x),
            Activation::Identity => x.clone(),
        }
    }

    /// Backward given the activation's input `x`.
    pub fn backward<T: Real>(self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Activation::Relu => relu_backward(x, grad_out),
            Activation::Identity => {
                grad_out.expect_shape(x.shape(), "identity backward")?;
                Ok(grad_out.clone())
            }
        }
    }
}

pub fn relu_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Masks `grad_out` by `x > 0`; the subgradient at zero is zero.
pub fn relu_backward<T: Real>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    grad_out.expect_shape(x.shape(), "relu_backward grad_out")?;
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(x.shape(), data)
}
