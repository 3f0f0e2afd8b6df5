use rayon::prelude::*;

use crate::error::{check_grad_shape, shape_err, Result};
use crate::{Scalar, Tensor};

/// Argmax offsets (0..4, row-major within the 2x2 window) per output cell.
pub struct MaxPoolCache {
    argmax: Vec<u8>,
    in_shape: [usize; 5],
    out_shape: [usize; 5],
}

impl MaxPoolCache {
    pub fn argmax(&self) -> &[u8] {
        &self.argmax
    }
}

/// Max pooling with kernel and stride `(1, 2, 2)`: keeps T, halves H and W.
/// Ties resolve to the first position in row-major window order.
pub fn maxpool3d<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, MaxPoolCache)> {
    let [b, c, t, h, w] = input.dims5("maxpool3d")?;
    if h % 2 != 0 || w % 2 != 0 {
        return shape_err(
            "maxpool3d",
            format!("H and W must be even for a (1,2,2) pool, got {h}x{w}"),
        );
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[b, c, t, oh, ow]);
    let mut argmax = vec![0u8; b * c * t * oh * ow];
    out.data_mut()
        .par_chunks_mut(oh * ow)
        .zip(argmax.par_chunks_mut(oh * ow))
        .zip(input.data().par_chunks(h * w))
        .for_each(|((y, am), x)| {
            for i in 0..oh {
                for j in 0..ow {
                    let base = 2 * i * w + 2 * j;
                    let window = [x[base], x[base + 1], x[base + w], x[base + w + 1]];
                    let mut best = 0;
                    for k in 1..4 {
                        if window[k] > window[best] {
                            best = k;
                        }
                    }
                    y[i * ow + j] = window[best];
                    am[i * ow + j] = best as u8;
                }
            }
        });
    let cache = MaxPoolCache {
        argmax,
        in_shape: [b, c, t, h, w],
        out_shape: [b, c, t, oh, ow],
    };
    Ok((out, cache))
}

pub fn maxpool3d_backward<T: Scalar>(cache: MaxPoolCache, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    check_grad_shape("maxpool3d_backward", &cache.out_shape, grad_out.shape())?;
    let [_, _, _, h, w] = cache.in_shape;
    let [_, _, _, oh, ow] = cache.out_shape;
    let mut dx = Tensor::zeros(&cache.in_shape);
    dx.data_mut()
        .par_chunks_mut(h * w)
        .zip(grad_out.data().par_chunks(oh * ow))
        .zip(cache.argmax.par_chunks(oh * ow))
        .for_each(|((d, g), am)| {
            for i in 0..oh {
                for j in 0..ow {
                    let k = am[i * ow + j] as usize;
                    let pos = (2 * i + k / 2) * w + 2 * j + k % 2;
                    d[pos] = g[i * ow + j];
                }
            }
        });
    Ok(dx)
}

pub struct AvgPoolCache {
    in_shape: [usize; 5],
}

/// Mean over `(T, H, W)`: `(B, C, T, H, W) -> (B, C)`.
pub fn global_avg_pool<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, AvgPoolCache)> {
    let [b, c, t, h, w] = input.dims5("global_avg_pool")?;
    let s = t * h * w;
    let n = T::from_usize(s).expect("size fits");
    let vals: Vec<T> = input
        .data()
        .chunks(s)
        .map(|plane| plane.iter().copied().sum::<T>() / n)
        .collect();
    let out = Tensor::from_vec(&[b, c], vals)?;
    Ok((out, AvgPoolCache { in_shape: [b, c, t, h, w] }))
}

pub fn global_avg_pool_backward<T: Scalar>(
    cache: AvgPoolCache,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [b, c, t, h, w] = cache.in_shape;
    check_grad_shape("global_avg_pool_backward", &[b, c], grad_out.shape())?;
    let s = t * h * w;
    let n = T::from_usize(s).expect("size fits");
    let mut dx = Tensor::zeros(&cache.in_shape);
    for (plane, &g) in dx.data_mut().chunks_mut(s).zip(grad_out.data()) {
        plane.fill(g / n);
    }
    Ok(dx)
}
