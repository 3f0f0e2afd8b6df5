use crate::error::Result;
use crate::{Scalar, Tensor};

/// Row-wise softmax of a `(B, K)` tensor, computed after subtracting each
/// row's maximum.
pub fn softmax<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, k] = input.dims2("softmax")?;
    let mut out = input.clone();
    for row in out.data_mut().chunks_mut(k) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total = total + *v;
        }
        for v in row.iter_mut() {
            *v = *v / total;
        }
    }
    Ok(out)
}

/// Row-wise `log(softmax(x))` without forming the probabilities.
pub fn log_softmax<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, k] = input.dims2("log_softmax")?;
    let mut out = input.clone();
    for row in out.data_mut().chunks_mut(k) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
        for v in row.iter_mut() {
            *v = *v - lse;
        }
    }
    Ok(out)
}
