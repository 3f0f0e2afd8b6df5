use crate::error::{check_grad_shape, Result};
use crate::{Scalar, Tensor};

pub struct ReluCache {
    active: Vec<bool>,
    shape: Vec<usize>,
}

impl ReluCache {
    /// Which inputs were strictly positive.
    pub fn active(&self) -> &[bool] {
        &self.active
    }
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> (Tensor<T>, ReluCache) {
    let active: Vec<bool> = input.data().iter().map(|&v| v > T::zero()).collect();
    let values = input
        .data()
        .iter()
        .map(|&v| if v > T::zero() { v } else { T::zero() })
        .collect();
    let out = Tensor::from_vec(input.shape(), values).expect("same shape as the input");
    let cache = ReluCache {
        active,
        shape: input.shape().to_vec(),
    };
    (out, cache)
}

/// Gradient is passed where the input was strictly positive; zero at exactly 0.
pub fn relu_backward<T: Scalar>(cache: ReluCache, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    check_grad_shape("relu_backward", &cache.shape, grad_out.shape())?;
    let mut g = grad_out.clone();
    for (v, &on) in g.data_mut().iter_mut().zip(&cache.active) {
        if !on {
            *v = T::zero();
        }
    }
    Ok(g)
}

pub struct SigmoidCache<T> {
    output: Tensor<T>,
}

pub fn sigmoid<T: Scalar>(input: &Tensor<T>) -> (Tensor<T>, SigmoidCache<T>) {
    let mut out = input.clone();
    for v in out.data_mut() {
        // Split on sign so exp never overflows.
        *v = if *v >= T::zero() {
            T::one() / (T::one() + (-*v).exp())
        } else {
            let e = v.exp();
            e / (T::one() + e)
        };
    }
    let cache = SigmoidCache {
        output: out.clone(),
    };
    (out, cache)
}

pub fn sigmoid_backward<T: Scalar>(
    cache: SigmoidCache<T>,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    check_grad_shape("sigmoid_backward", cache.output.shape(), grad_out.shape())?;
    let mut g = grad_out.clone();
    for (v, &s) in g.data_mut().iter_mut().zip(cache.output.data()) {
        *v = *v * s * (T::one() - s);
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_forward_and_subgradient_convention() {
        let x = Tensor::<f64>::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        let (y, cache) = relu(&x);
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        let g = relu_backward(cache, &Tensor::filled(&[3], 1.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn relu_backward_rejects_foreign_gradient() {
        let (_, cache) = relu(&Tensor::<f32>::zeros(&[4]));
        assert!(relu_backward(cache, &Tensor::<f32>::zeros(&[5])).is_err());
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        let x = Tensor::<f64>::from_vec(&[3], vec![-1000.0, 0.0, 1000.0]).unwrap();
        let (y, _) = sigmoid(&x);
        assert_eq!(y.data(), &[0.0, 0.5, 1.0]);
    }
}
