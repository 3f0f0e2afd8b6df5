use rand::Rng;

use crate::error::{check_grad_shape, Result};
use crate::{Mode, Scalar, Tensor, TensorError};

pub struct DropoutCache<T> {
    /// `None` when the layer acted as the identity.
    mask: Option<Vec<T>>,
    shape: Vec<usize>,
}

/// Inverted dropout: in train mode each element is zeroed with probability
/// `rate` and survivors are scaled by `1 / (1 - rate)`; eval mode and
/// `rate == 0` are exact identities and draw nothing from `rng`.
pub fn dropout<T: Scalar, R: Rng + ?Sized>(
    input: &Tensor<T>,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor<T>, DropoutCache<T>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(TensorError::Config(format!(
            "dropout rate must be in [0, 1), got {rate}"
        )));
    }
    let shape = input.shape().to_vec();
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((input.clone(), DropoutCache { mask: None, shape }));
    }
    let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..input.len())
        .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
        .collect();
    let mut out = input.clone();
    for (v, &m) in out.data_mut().iter_mut().zip(&mask) {
        *v = *v * m;
    }
    Ok((out, DropoutCache { mask: Some(mask), shape }))
}

pub fn dropout_backward<T: Scalar>(cache: DropoutCache<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    check_grad_shape("dropout_backward", &cache.shape, grad_out.shape())?;
    let mut g = grad_out.clone();
    if let Some(mask) = cache.mask {
        for (v, m) in g.data_mut().iter_mut().zip(mask) {
            *v = *v * m;
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_cases() {
        let x = Tensor::<f32>::from_fn(&[4, 8], |i| i as f32);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(dropout(&x, 0.0, Mode::Train, &mut rng).unwrap().0, x);
        assert_eq!(dropout(&x, 0.9, Mode::Eval, &mut rng).unwrap().0, x);
    }

    #[test]
    fn rate_one_is_a_config_error() {
        let x = Tensor::<f32>::zeros(&[2]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            dropout(&x, 1.0, Mode::Train, &mut rng),
            Err(TensorError::Config(_))
        ));
    }

    #[test]
    fn survivor_fraction_near_keep_probability() {
        let x = Tensor::<f64>::filled(&[10_000], 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let (y, _) = dropout(&x, 0.5, Mode::Train, &mut rng).unwrap();
        let survivors = y.data().iter().filter(|&&v| v != 0.0).count() as f64 / 1e4;
        assert!((survivors - 0.5).abs() < 0.05, "{survivors}");
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn backward_reuses_forward_mask() {
        let x = Tensor::<f64>::filled(&[64], 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (y, cache) = dropout(&x, 0.3, Mode::Train, &mut rng).unwrap();
        let g = dropout_backward(cache, &Tensor::filled(&[64], 1.0)).unwrap();
        assert_eq!(g, y);
    }
}
