use super::{AccumulationMode, ClipTensor, EncoderConfig, EventFrame, EventStream};
use crate::{Error, Result};

/// Splits the stream into windows of `1 / rate` seconds starting at the first
/// event and accumulates each window into a frame normalized by its own
/// maximum. An empty stream yields one all-zero frame.
pub fn accumulate_events(stream: &EventStream, config: &EncoderConfig) -> Result<Vec<EventFrame>> {
    config.validate()?;
    stream.validate()?;
    let (w, h) = (stream.width as usize, stream.height as usize);
    let (first, last) = match (stream.events.first(), stream.events.last()) {
        (Some(f), Some(l)) => (f.t, l.t),
        _ => return Ok(vec![EventFrame::zeros(w, h)]),
    };
    let per_us = config.accumulation_rate / 1e6;
    let span = (last - first) as f64;
    let count = ((span * per_us).ceil() as usize).max(1);

    let mut acc = vec![vec![0i64; w * h]; count];
    for e in &stream.events {
        let idx = (((e.t - first) as f64 * per_us).floor() as usize).min(count - 1);
        let cell = &mut acc[idx][e.y as usize * w + e.x as usize];
        *cell += match config.accumulation_mode {
            AccumulationMode::Count => 1,
            AccumulationMode::PolaritySum => e.polarity as i64,
        };
    }
    Ok(acc
        .into_iter()
        .map(|cells| {
            let mags: Vec<f32> = cells.iter().map(|&v| v.unsigned_abs() as f32).collect();
            let max = mags.iter().copied().fold(0.0f32, f32::max);
            let values = if max > 0.0 {
                mags.iter().map(|&v| v / max).collect()
            } else {
                mags
            };
            EventFrame {
                width: w,
                height: h,
                values,
            }
        })
        .collect())
}

/// `floor(k * n / t)` for `k = 0..t`; repeats indices when `n < t`.
pub fn downsample_indices(n: usize, t: usize) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::InsufficientInput("cannot downsample an empty sequence".into()));
    }
    if t == 0 {
        return Err(Error::Config("clip length must be >= 1".into()));
    }
    Ok((0..t).map(|k| k * n / t).collect())
}

/// Picks `t` frames at uniformly spaced indices, discarding the rest.
pub fn uniform_downsample<F: Clone>(frames: &[F], t: usize) -> Result<Vec<F>> {
    Ok(downsample_indices(frames.len(), t)?
        .into_iter()
        .map(|i| frames[i].clone())
        .collect())
}

/// Aspect-preserving bilinear resize so the frame fits `(height, width)`
/// with its longer side matching, then symmetric zero padding.
pub fn resize_pad(frame: &EventFrame, target: (usize, usize)) -> Result<EventFrame> {
    let (th, tw) = target;
    if th == 0 || tw == 0 {
        return Err(Error::Config(format!("target resolution {tw}x{th} has zero area")));
    }
    let (sh, sw) = (frame.height, frame.width);
    if sh == 0 || sw == 0 || frame.values.len() != sh * sw {
        return Err(Error::Format(format!("source frame {sw}x{sh} is empty or malformed")));
    }
    if (sh, sw) == (th, tw) {
        return Ok(frame.clone());
    }
    let scale = (th as f64 / sh as f64).min(tw as f64 / sw as f64);
    let nh = ((sh as f64 * scale).round() as usize).clamp(1, th);
    let nw = ((sw as f64 * scale).round() as usize).clamp(1, tw);
    let top = (th - nh) / 2;
    let left = (tw - nw) / 2;

    // half-pixel centres, edge clamped
    let axis = |n_out: usize, n_in: usize| -> Vec<(usize, usize, f32)> {
        let ratio = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * ratio - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, (src - i0 as f64) as f32)
            })
            .collect()
    };
    let rows = axis(nh, sh);
    let cols = axis(nw, sw);

    let mut out = EventFrame::zeros(tw, th);
    for (oy, &(y0, y1, fy)) in rows.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in cols.iter().enumerate() {
            let top_row = frame.get(x0, y0) * (1.0 - fx) + frame.get(x1, y0) * fx;
            let bottom_row = frame.get(x0, y1) * (1.0 - fx) + frame.get(x1, y1) * fx;
            let v = top_row * (1.0 - fy) + bottom_row * fy;
            out.values[(top + oy) * tw + left + ox] = v.clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Accumulate, downsample to the clip length and resize every frame.
pub fn encode_clip(stream: &EventStream, config: &EncoderConfig) -> Result<ClipTensor> {
    let frames = accumulate_events(stream, config)?;
    let picked = uniform_downsample(&frames, config.clip_length)?;
    let resized = picked
        .iter()
        .map(|f| resize_pad(f, config.target_resolution))
        .collect::<Result<Vec<_>>>()?;
    ClipTensor::from_frames(&resized)
}
