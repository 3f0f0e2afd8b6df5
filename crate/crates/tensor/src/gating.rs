use crate::error::{check_grad_shape, shape_err, Result};
use crate::{Scalar, Tensor};

pub struct ChannelScaleCache<T> {
    features: Tensor<T>,
    gate: Tensor<T>,
}

/// Multiplies every `(T, H, W)` plane of channel `c` in sample `b` by
/// `gate[b, c]`.
pub fn scale_channels<T: Scalar>(
    features: &Tensor<T>,
    gate: &Tensor<T>,
) -> Result<(Tensor<T>, ChannelScaleCache<T>)> {
    let [b, c, t, h, w] = features.dims5("scale_channels")?;
    if gate.shape() != [b, c] {
        return shape_err(
            "scale_channels",
            format!("gate shape {:?}, expected [{b}, {c}]", gate.shape()),
        );
    }
    let s = t * h * w;
    let mut out = features.clone();
    for (plane, &g) in out.data_mut().chunks_mut(s).zip(gate.data()) {
        plane.iter_mut().for_each(|v| *v = *v * g);
    }
    let cache = ChannelScaleCache {
        features: features.clone(),
        gate: gate.clone(),
    };
    Ok((out, cache))
}

/// Returns `(grad_features, grad_gate)`.
pub fn scale_channels_backward<T: Scalar>(
    cache: ChannelScaleCache<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    check_grad_shape("scale_channels_backward", cache.features.shape(), grad_out.shape())?;
    let [_, _, t, h, w] = cache.features.dims5("scale_channels_backward")?;
    let s = t * h * w;
    let mut dfeat = grad_out.clone();
    for (plane, &g) in dfeat.data_mut().chunks_mut(s).zip(cache.gate.data()) {
        plane.iter_mut().for_each(|v| *v = *v * g);
    }
    let dgate: Vec<T> = grad_out
        .data()
        .chunks(s)
        .zip(cache.features.data().chunks(s))
        .map(|(g, f)| g.iter().zip(f).map(|(&a, &b)| a * b).sum())
        .collect();
    let dgate = Tensor::from_vec(cache.gate.shape(), dgate)?;
    Ok((dfeat, dgate))
}
