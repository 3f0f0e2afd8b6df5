use rayon::prelude::*;

use crate::error::{check_grad_shape, shape_err, Result};
use crate::{Mode, Scalar, Tensor, TensorError};

/// Per-channel running mean and variance used in eval mode.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

impl<T: Scalar> RunningStats<T> {
    /// Mean 0, variance 1.
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: Tensor::zeros(&[channels]),
            var: Tensor::filled(&[channels], T::one()),
        }
    }
}

pub struct BatchNormCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
    gamma: Vec<T>,
    mode: Mode,
}

#[derive(Debug, Clone)]
pub struct BatchNormGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

/// Sum of `f(x)` in double precision over eight interleaved accumulators.
fn lane_sum<T: Scalar>(xs: &[T], f: impl Fn(f64) -> f64) -> f64 {
    let mut acc = [0.0; 8];
    let mut chunks = xs.chunks_exact(8);
    for c in &mut chunks {
        for (a, &v) in acc.iter_mut().zip(c) {
            *a += f(v.to_f64_lossy());
        }
    }
    let tail: f64 = chunks.remainder().iter().map(|&v| f(v.to_f64_lossy())).sum();
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `(sum(g * x), sum(g))` with the accumulation scheme of [`lane_sum`].
fn lane_dot_sum<T: Scalar>(g: &[T], x: &[T]) -> (f64, f64) {
    let mut dot = [0.0; 8];
    let mut sum = [0.0; 8];
    let (mut gc, mut xc) = (g.chunks_exact(8), x.chunks_exact(8));
    for (gs, xs) in (&mut gc).zip(&mut xc) {
        for i in 0..8 {
            let gv = gs[i].to_f64_lossy();
            dot[i] += gv * xs[i].to_f64_lossy();
            sum[i] += gv;
        }
    }
    let fold = |a: [f64; 8]| ((a[0] + a[4]) + (a[1] + a[5])) + ((a[2] + a[6]) + (a[3] + a[7]));
    let (mut d, mut s) = (fold(dot), fold(sum));
    for (&gv, &xv) in gc.remainder().iter().zip(xc.remainder()) {
        d += gv.to_f64_lossy() * xv.to_f64_lossy();
        s += gv.to_f64_lossy();
    }
    (d, s)
}

/// Sums `f(x)` over every `(b, s)` position of channel `c`.
fn channel_sum<T: Scalar>(
    data: &[T],
    c: usize,
    channels: usize,
    s: usize,
    f: impl Fn(f64) -> f64,
) -> f64 {
    data.chunks(channels * s)
        .map(|sample| lane_sum(&sample[c * s..(c + 1) * s], &f))
        .sum()
}

/// Batch normalization over `(B, T, H, W)` for each channel of a 5-D input.
///
/// Train mode normalizes with biased batch statistics and folds them into
/// `running` as `running = (1 - momentum) * running + momentum * batch`, using
/// the unbiased variance estimate for the running variance. Eval mode reads
/// `running` and leaves it untouched.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm3d<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running: &mut RunningStats<T>,
    mode: Mode,
    momentum: T,
    epsilon: T,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let [b, c, t, h, w] = input.dims5("batchnorm3d")?;
    for (name, p) in [
        ("gamma", gamma),
        ("beta", beta),
        ("running mean", &running.mean),
        ("running var", &running.var),
    ] {
        if p.shape() != [c] {
            return shape_err(
                "batchnorm3d",
                format!("{name} shape {:?}, expected [{c}]", p.shape()),
            );
        }
    }
    if epsilon <= T::zero() {
        return Err(TensorError::Config("batchnorm epsilon must be > 0".into()));
    }
    let s = t * h * w;
    let count = T::from_usize(b * s).expect("count fits");
    let x = input.data();

    let (mean, inv_std): (Vec<T>, Vec<T>) = match mode {
        Mode::Train => {
            let stats: Vec<(T, T)> = (0..c)
                .into_par_iter()
                .map(|ch| {
                    let n = (b * s) as f64;
                    let mean = channel_sum(x, ch, c, s, |v| v) / n;
                    let var = channel_sum(x, ch, c, s, |v| (v - mean) * (v - mean)) / n;
                    (T::from_f64_lossy(mean), T::from_f64_lossy(var))
                })
                .collect();
            let unbias = if b * s > 1 {
                count / (count - T::one())
            } else {
                T::one()
            };
            for (ch, &(m, v)) in stats.iter().enumerate() {
                let rm = &mut running.mean.data_mut()[ch];
                *rm = (T::one() - momentum) * *rm + momentum * m;
                let rv = &mut running.var.data_mut()[ch];
                *rv = (T::one() - momentum) * *rv + momentum * v * unbias;
            }
            stats
                .into_iter()
                .map(|(m, v)| (m, T::one() / (v + epsilon).sqrt()))
                .unzip()
        }
        Mode::Eval => running
            .mean
            .data()
            .iter()
            .zip(running.var.data())
            .map(|(&m, &v)| (m, T::one() / (v + epsilon).sqrt()))
            .unzip(),
    };

    let mut xhat = input.clone();
    let mut out = Tensor::zeros(input.shape());
    let (g, be) = (gamma.data(), beta.data());
    xhat.data_mut()
        .par_chunks_mut(s)
        .zip(out.data_mut().par_chunks_mut(s))
        .enumerate()
        .for_each(|(i, (xh, y))| {
            let ch = i % c;
            for (xv, yv) in xh.iter_mut().zip(y.iter_mut()) {
                *xv = (*xv - mean[ch]) * inv_std[ch];
                *yv = g[ch] * *xv + be[ch];
            }
        });

    debug_assert!(out.all_finite(), "batchnorm3d produced non-finite output");
    let cache = BatchNormCache {
        xhat,
        inv_std,
        gamma: g.to_vec(),
        mode,
    };
    Ok((out, cache))
}

pub fn batchnorm3d_backward<T: Scalar>(
    cache: BatchNormCache<T>,
    grad_out: &Tensor<T>,
) -> Result<BatchNormGrads<T>> {
    check_grad_shape("batchnorm3d_backward", cache.xhat.shape(), grad_out.shape())?;
    let [b, c, t, h, w] = cache.xhat.dims5("batchnorm3d_backward")?;
    let s = t * h * w;
    let count = T::from_usize(b * s).expect("count fits");
    let dy = grad_out.data();
    let xhat = cache.xhat.data();

    let sums: Vec<(T, T)> = (0..c)
        .into_par_iter()
        .map(|ch| {
            let mut dgamma = 0.0;
            let mut dbeta = 0.0;
            for (gs, xs) in dy.chunks(c * s).zip(xhat.chunks(c * s)) {
                let gp = &gs[ch * s..(ch + 1) * s];
                let xp = &xs[ch * s..(ch + 1) * s];
                let (d, s) = lane_dot_sum(gp, xp);
                dgamma += d;
                dbeta += s;
            }
            (T::from_f64_lossy(dgamma), T::from_f64_lossy(dbeta))
        })
        .collect();

    let mut dx = grad_out.clone();
    let mode = cache.mode;
    dx.data_mut()
        .par_chunks_mut(s)
        .zip(xhat.par_chunks(s))
        .enumerate()
        .for_each(|(i, (d, xh))| {
            let ch = i % c;
            let scale = cache.gamma[ch] * cache.inv_std[ch];
            match mode {
                Mode::Train => {
                    let (dgamma, dbeta) = sums[ch];
                    for (dv, &xv) in d.iter_mut().zip(xh) {
                        *dv = scale * (*dv - (dbeta + xv * dgamma) / count);
                    }
                }
                Mode::Eval => {
                    for dv in d.iter_mut() {
                        *dv = *dv * scale;
                    }
                }
            }
        });

    let (dgamma, dbeta): (Vec<T>, Vec<T>) = sums.into_iter().unzip();
    Ok(BatchNormGrads {
        input: dx,
        gamma: Tensor::from_vec(&[c], dgamma)?,
        beta: Tensor::from_vec(&[c], dbeta)?,
    })
}
