//! 3x3x3 same-padded convolution via im2col + GEMM.

use rayon::prelude::*;

use crate::error::{check_grad_shape, shape_err, Result};
use crate::linalg::gemm_strided;
use crate::{Scalar, Tensor};

const K: usize = 3;
const TAPS: usize = K * K * K;
/// Samples per weight-gradient partial sum. Fixed so the reduction order does
/// not depend on the number of worker threads.
const GRAD_GROUP: usize = 8;

pub struct Conv3dCache<T> {
    input: Tensor<T>,
    weights: Tensor<T>,
    out_shape: [usize; 5],
}

#[derive(Debug, Clone)]
pub struct Conv3dGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Clone, Copy)]
struct Geometry {
    cin: usize,
    t: usize,
    h: usize,
    w: usize,
}

impl Geometry {
    fn spatial(&self) -> usize {
        self.t * self.h * self.w
    }

    fn rows(&self) -> usize {
        self.cin * TAPS
    }

    /// Output rows `(t, h)` per im2col tile, sized so a tile holds about
    /// `TILE_COLUMNS` positions.
    fn lines_per_tile(&self) -> usize {
        (TILE_COLUMNS / self.w).max(1)
    }

    /// `[start, end)` ranges of output rows covering the volume.
    fn tiles(&self) -> impl Iterator<Item = (usize, usize)> {
        let lines = self.t * self.h;
        let step = self.lines_per_tile();
        (0..lines).step_by(step).map(move |l| (l, (l + step).min(lines)))
    }

    fn tile_len(&self) -> usize {
        self.rows() * self.lines_per_tile().min(self.t * self.h) * self.w
    }
}

/// Positions per im2col tile; keeps the unfolded tile cache-sized.
const TILE_COLUMNS: usize = 2048;

/// Unfolds output rows `lines` of one sample `(Cin, T, H, W)` into
/// `(Cin*27, lines*W)` with zero padding.
fn im2col<T: Scalar>(x: &[T], g: Geometry, lines: (usize, usize), col: &mut [T]) {
    let (t_len, h_len, w_len) = (g.t, g.h, g.w);
    let s = g.spatial();
    let n = (lines.1 - lines.0) * w_len;
    for ci in 0..g.cin {
        let plane = &x[ci * s..(ci + 1) * s];
        for tap in 0..TAPS {
            let (kt, kh, kw) = (tap / 9, (tap / 3) % 3, tap % 3);
            let row = &mut col[(ci * TAPS + tap) * n..(ci * TAPS + tap + 1) * n];
            for (i, line) in (lines.0..lines.1).enumerate() {
                let st = (line / h_len) as isize + kt as isize - 1;
                let sh = (line % h_len) as isize + kh as isize - 1;
                let dst = &mut row[i * w_len..(i + 1) * w_len];
                if st < 0 || st >= t_len as isize || sh < 0 || sh >= h_len as isize {
                    dst.fill(T::zero());
                    continue;
                }
                let src_base = (st as usize * h_len + sh as usize) * w_len;
                let src = &plane[src_base..src_base + w_len];
                match kw {
                    0 => {
                        dst[0] = T::zero();
                        dst[1..].copy_from_slice(&src[..w_len - 1]);
                    }
                    1 => dst.copy_from_slice(src),
                    _ => {
                        dst[..w_len - 1].copy_from_slice(&src[1..]);
                        dst[w_len - 1] = T::zero();
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: adds `(Cin*27, lines*W)` back onto `(Cin, T, H, W)`.
fn col2im<T: Scalar>(col: &[T], g: Geometry, lines: (usize, usize), dx: &mut [T]) {
    let (t_len, h_len, w_len) = (g.t, g.h, g.w);
    let s = g.spatial();
    let n = (lines.1 - lines.0) * w_len;
    for ci in 0..g.cin {
        let plane = &mut dx[ci * s..(ci + 1) * s];
        for tap in 0..TAPS {
            let (kt, kh, kw) = (tap / 9, (tap / 3) % 3, tap % 3);
            let row = &col[(ci * TAPS + tap) * n..(ci * TAPS + tap + 1) * n];
            for (i, line) in (lines.0..lines.1).enumerate() {
                let st = (line / h_len) as isize + kt as isize - 1;
                let sh = (line % h_len) as isize + kh as isize - 1;
                if st < 0 || st >= t_len as isize || sh < 0 || sh >= h_len as isize {
                    continue;
                }
                let src = &row[i * w_len..(i + 1) * w_len];
                let base = (st as usize * h_len + sh as usize) * w_len;
                let dst = &mut plane[base..base + w_len];
                match kw {
                    0 => {
                        for (d, &v) in dst[..w_len - 1].iter_mut().zip(&src[1..]) {
                            *d = *d + v;
                        }
                    }
                    1 => {
                        for (d, &v) in dst.iter_mut().zip(src) {
                            *d = *d + v;
                        }
                    }
                    _ => {
                        for (d, &v) in dst[1..].iter_mut().zip(&src[..w_len - 1]) {
                            *d = *d + v;
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation with 3x3x3 kernels, stride 1 and zero padding 1 on every
/// axis, so the output keeps the input's `(T, H, W)`.
///
/// `weights` is `(C_out, C_in, 3, 3, 3)`, `bias` is `(C_out)`.
pub fn conv3d<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(Tensor<T>, Conv3dCache<T>)> {
    let [b, cin, t, h, w] = input.dims5("conv3d")?;
    let [cout, wcin, k0, k1, k2] = weights.dims5("conv3d")?;
    if wcin != cin {
        return shape_err(
            "conv3d",
            format!("input has {cin} channels, weights expect {wcin}"),
        );
    }
    if (k0, k1, k2) != (K, K, K) {
        return shape_err("conv3d", format!("kernel must be 3x3x3, got {k0}x{k1}x{k2}"));
    }
    if bias.shape() != [cout] {
        return shape_err(
            "conv3d",
            format!("bias shape {:?}, expected [{cout}]", bias.shape()),
        );
    }
    let g = Geometry { cin, t, h, w };
    let s = g.spatial();
    let rows = g.rows();
    let mut out = Tensor::zeros(&[b, cout, t, h, w]);
    let wdata = weights.data();
    let bdata = bias.data();

    out.data_mut()
        .par_chunks_mut(cout * s)
        .zip(input.data().par_chunks(cin * s))
        .for_each_init(
            || vec![T::zero(); g.tile_len()],
            |col, (y, x)| {
                for (co, plane) in y.chunks_mut(s).enumerate() {
                    plane.fill(bdata[co]);
                }
                for lines in g.tiles() {
                    let n = (lines.1 - lines.0) * w;
                    im2col(x, g, lines, col);
                    gemm_strided(
                        cout,
                        rows,
                        n,
                        T::one(),
                        (wdata, rows, 1),
                        (col, n, 1),
                        T::one(),
                        (&mut y[lines.0 * w..], s),
                    );
                }
            },
        );

    debug_assert!(out.all_finite(), "conv3d produced non-finite output");
    let cache = Conv3dCache {
        input: input.clone(),
        weights: weights.clone(),
        out_shape: [b, cout, t, h, w],
    };
    Ok((out, cache))
}

/// Exact gradients of [`conv3d`] with respect to input, weights and bias.
pub fn conv3d_backward<T: Scalar>(
    cache: Conv3dCache<T>,
    grad_out: &Tensor<T>,
) -> Result<Conv3dGrads<T>> {
    backward_impl(cache, grad_out, true)
}

/// Like [`conv3d_backward`] but skips the input gradient, for the first layer
/// of a network where nothing upstream is trainable.
pub fn conv3d_backward_params<T: Scalar>(
    cache: Conv3dCache<T>,
    grad_out: &Tensor<T>,
) -> Result<Conv3dGrads<T>> {
    backward_impl(cache, grad_out, false)
}

fn backward_impl<T: Scalar>(
    cache: Conv3dCache<T>,
    grad_out: &Tensor<T>,
    want_input: bool,
) -> Result<Conv3dGrads<T>> {
    check_grad_shape("conv3d_backward", &cache.out_shape, grad_out.shape())?;
    let [b, cout, t, h, w] = cache.out_shape;
    let cin = cache.input.shape()[1];
    let g = Geometry { cin, t, h, w };
    let s = g.spatial();
    let rows = g.rows();
    let gy = grad_out.data();
    let wdata = cache.weights.data();

    let mut grad_bias = Tensor::zeros(&[cout]);
    for sample in gy.chunks(cout * s) {
        for (co, plane) in sample.chunks(s).enumerate() {
            let acc = plane.iter().copied().sum::<T>();
            grad_bias.data_mut()[co] = grad_bias.data()[co] + acc;
        }
    }

    let mut dx = if want_input {
        vec![T::zero(); b * cin * s]
    } else {
        Vec::new()
    };
    let dx_group = if want_input { GRAD_GROUP * cin * s } else { 1 };
    let mut dx_chunks: Vec<&mut [T]> = dx.chunks_mut(dx_group).collect();
    dx_chunks.resize_with(b.div_ceil(GRAD_GROUP), Default::default);

    // One pass per tile: unfold, accumulate the weight gradient, and scatter
    // the input gradient.
    let partials: Vec<Vec<T>> = gy
        .par_chunks(GRAD_GROUP * cout * s)
        .zip(cache.input.data().par_chunks(GRAD_GROUP * cin * s))
        .zip(dx_chunks.into_par_iter())
        .map(|((gy_group, x_group), dx_group)| {
            let mut dw = vec![T::zero(); cout * rows];
            let mut col = vec![T::zero(); g.tile_len()];
            let mut dcol = if want_input {
                vec![T::zero(); g.tile_len()]
            } else {
                Vec::new()
            };
            for (i, (gy_b, x_b)) in gy_group.chunks(cout * s).zip(x_group.chunks(cin * s)).enumerate() {
                for lines in g.tiles() {
                    let n = (lines.1 - lines.0) * w;
                    let gy_tile = &gy_b[lines.0 * w..];
                    im2col(x_b, g, lines, &mut col);
                    gemm_strided(
                        cout,
                        n,
                        rows,
                        T::one(),
                        (gy_tile, s, 1),
                        (&col, 1, n),
                        T::one(),
                        (&mut dw, rows),
                    );
                    if want_input {
                        gemm_strided(
                            rows,
                            cout,
                            n,
                            T::one(),
                            (wdata, 1, rows),
                            (gy_tile, s, 1),
                            T::zero(),
                            (&mut dcol, n),
                        );
                        col2im(&dcol, g, lines, &mut dx_group[i * cin * s..(i + 1) * cin * s]);
                    }
                }
            }
            dw
        })
        .collect();
    let mut grad_weights = Tensor::zeros(cache.weights.shape());
    for part in &partials {
        for (a, &p) in grad_weights.data_mut().iter_mut().zip(part) {
            *a = *a + p;
        }
    }

    let grad_input = if want_input {
        Some(Tensor::from_vec(&[b, cin, t, h, w], dx)?)
    } else {
        None
    };

    Ok(Conv3dGrads {
        input: grad_input,
        weights: grad_weights,
        bias: grad_bias,
    })
}
