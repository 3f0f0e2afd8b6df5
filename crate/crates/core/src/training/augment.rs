use std::collections::BTreeSet;

use rand::Rng;

use crate::event_codec::ClipTensor;

pub const AUGMENT_PROBABILITY: f64 = 0.5;
pub const MAX_ROTATION_DEG: f64 = 15.0;
/// Fraction of width/height.
pub const MAX_TRANSLATION: f64 = 0.1;
const BLUR_SIGMA: (f64, f64) = (0.1, 1.0);

/// Parameters drawn once per clip and applied to every frame.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Plan {
    flip: bool,
    rotation_deg: f64,
    shift: (f64, f64),
    blur_sigma: Option<f64>,
}

impl Plan {
    /// Always consumes the same amount of randomness, whatever the outcome.
    fn draw(rng: &mut impl Rng) -> Self {
        let mut coin = || rng.gen_bool(AUGMENT_PROBABILITY);
        let (flip, rotate, translate, blur) = (coin(), coin(), coin(), coin());
        let angle = rng.gen_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG);
        let dx = rng.gen_range(-MAX_TRANSLATION..=MAX_TRANSLATION);
        let dy = rng.gen_range(-MAX_TRANSLATION..=MAX_TRANSLATION);
        let sigma = rng.gen_range(BLUR_SIGMA.0..=BLUR_SIGMA.1);
        Plan {
            flip,
            rotation_deg: if rotate { angle } else { 0.0 },
            shift: if translate { (dx, dy) } else { (0.0, 0.0) },
            blur_sigma: blur.then_some(sigma),
        }
    }
}

/// Augments clips whose class is in `classes`; other clips are returned
/// unchanged. Each transform fires independently with probability 0.5 and
/// uses the same parameters for every frame. Values are clamped to `[0, 1]`.
pub fn augment(
    clip: &ClipTensor,
    class_idx: usize,
    classes: &BTreeSet<usize>,
    rng: &mut impl Rng,
) -> ClipTensor {
    if !classes.contains(&class_idx) {
        return clip.clone();
    }
    apply(clip, Plan::draw(rng))
}

fn apply(clip: &ClipTensor, plan: Plan) -> ClipTensor {
    let (h, w) = (clip.height, clip.width);
    let mut out = clip.clone();
    for frame in out.values.chunks_mut(h * w) {
        if plan.flip {
            flip_horizontal(frame, w);
        }
        if plan.rotation_deg != 0.0 || plan.shift != (0.0, 0.0) {
            let shift = (plan.shift.0 * w as f64, plan.shift.1 * h as f64);
            let moved = affine(frame, h, w, plan.rotation_deg.to_radians(), shift);
            frame.copy_from_slice(&moved);
        }
        if let Some(sigma) = plan.blur_sigma {
            gaussian_blur(frame, h, w, sigma);
        }
        frame.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }
    out
}

fn flip_horizontal(frame: &mut [f32], w: usize) {
    for row in frame.chunks_mut(w) {
        row.reverse();
    }
}

/// Rotation by `theta` about the image centre followed by a translation of
/// `shift` pixels, resampled bilinearly with zeros outside the source.
fn affine(frame: &[f32], h: usize, w: usize, theta: f64, shift: (f64, f64)) -> Vec<f32> {
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (s, c) = theta.sin_cos();
    let sample = |x: isize, y: isize| -> f64 {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            frame[y as usize * w + x as usize] as f64
        }
    };
    let mut out = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let px = x as f64 - cx - shift.0;
            let py = y as f64 - cy - shift.1;
            let sx = c * px + s * py + cx;
            let sy = -s * px + c * py + cy;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            let v = (1.0 - fy) * ((1.0 - fx) * sample(x0, y0) + fx * sample(x0 + 1, y0))
                + fy * ((1.0 - fx) * sample(x0, y0 + 1) + fx * sample(x0 + 1, y0 + 1));
            out[y * w + x] = v as f32;
        }
    }
    out
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.into_iter().map(|v| v / sum).collect()
}

/// Separable Gaussian blur with edge replication.
fn gaussian_blur(frame: &mut [f32], h: usize, w: usize, sigma: f64) {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let pass = |src: &[f32], len: usize, stride: usize, count: usize, step: usize| -> Vec<f32> {
        let mut dst = src.to_vec();
        for line in 0..count {
            let base = line * step;
            for i in 0..len {
                let mut acc = 0.0;
                for (j, &kv) in k.iter().enumerate() {
                    let p = (i as isize + j as isize - r).clamp(0, len as isize - 1) as usize;
                    acc += kv * src[base + p * stride] as f64;
                }
                dst[base + i * stride] = acc as f32;
            }
        }
        dst
    };
    let horizontal = pass(frame, w, 1, h, w);
    let vertical = pass(&horizontal, h, w, w, 1);
    frame.copy_from_slice(&vertical);
}
