use crate::error::{check_grad_shape, shape_err, Result};
use crate::linalg::gemm;
use crate::{Scalar, Tensor};

pub struct LinearCache<T> {
    input: Tensor<T>,
    weights: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct LinearGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

/// `y = x W^T + b` with `x: (B, F)`, `W: (K, F)`, `b: (K)`.
pub fn linear<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(Tensor<T>, LinearCache<T>)> {
    let [b, f] = input.dims2("linear")?;
    let [k, wf] = weights.dims2("linear")?;
    if wf != f {
        return shape_err("linear", format!("input has {f} features, weights expect {wf}"));
    }
    if bias.shape() != [k] {
        return shape_err("linear", format!("bias shape {:?}, expected [{k}]", bias.shape()));
    }
    let mut out = Tensor::zeros(&[b, k]);
    for row in out.data_mut().chunks_mut(k) {
        row.copy_from_slice(bias.data());
    }
    gemm(b, f, k, T::one(), input.data(), false, weights.data(), true, T::one(), out.data_mut());
    debug_assert!(out.all_finite(), "linear produced non-finite output");
    let cache = LinearCache {
        input: input.clone(),
        weights: weights.clone(),
    };
    Ok((out, cache))
}

pub fn linear_backward<T: Scalar>(
    cache: LinearCache<T>,
    grad_out: &Tensor<T>,
) -> Result<LinearGrads<T>> {
    let [b, f] = cache.input.dims2("linear_backward")?;
    let k = cache.weights.shape()[0];
    check_grad_shape("linear_backward", &[b, k], grad_out.shape())?;
    let g = grad_out.data();

    let mut dx = Tensor::zeros(&[b, f]);
    gemm(b, k, f, T::one(), g, false, cache.weights.data(), false, T::zero(), dx.data_mut());
    let mut dw = Tensor::zeros(&[k, f]);
    gemm(k, b, f, T::one(), g, true, cache.input.data(), false, T::zero(), dw.data_mut());
    let mut db = Tensor::zeros(&[k]);
    for row in g.chunks(k) {
        for (acc, &v) in db.data_mut().iter_mut().zip(row) {
            *acc = *acc + v;
        }
    }
    Ok(LinearGrads {
        input: dx,
        weights: dw,
        bias: db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights_pass_input_through() {
        let x = Tensor::<f64>::from_fn(&[3, 4], |i| i as f64 - 5.0);
        let w = Tensor::from_fn(&[4, 4], |i| if i % 5 == 0 { 1.0 } else { 0.0 });
        let (y, _) = linear(&x, &w, &Tensor::zeros(&[4])).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn weight_gradient_matches_loops() {
        let (b, f, k) = (3, 5, 2);
        let x = Tensor::<f64>::from_fn(&[b, f], |i| (i as f64 * 0.7).sin());
        let w = Tensor::from_fn(&[k, f], |i| (i as f64 * 1.3).cos());
        let g = Tensor::from_fn(&[b, k], |i| i as f64 * 0.25 - 0.5);
        let (_, cache) = linear(&x, &w, &Tensor::zeros(&[k])).unwrap();
        let grads = linear_backward(cache, &g).unwrap();
        for kk in 0..k {
            for ff in 0..f {
                let mut s = 0.0;
                for bb in 0..b {
                    s += g.data()[bb * k + kk] * x.data()[bb * f + ff];
                }
                assert!((grads.weights.data()[kk * f + ff] - s).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn feature_mismatch_is_rejected() {
        let x = Tensor::<f32>::zeros(&[2, 3]);
        let w = Tensor::<f32>::zeros(&[4, 5]);
        assert!(linear(&x, &w, &Tensor::zeros(&[4])).is_err());
    }
}
