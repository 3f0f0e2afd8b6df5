//! Log-intensity DVS emulation.

use super::{EncoderConfig, Event, EventStream};
use crate::{Error, Result};

/// Offset added to gray levels before taking the log.
pub const LOG_EPSILON: f64 = 1.0;

/// A grayscale video frame with intensities in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayFrame {
    pub timestamp_us: u64,
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f32>,
}

impl GrayFrame {
    pub fn new(timestamp_us: u64, width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::Format(format!(
                "{width}x{height} frame needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(GrayFrame {
            timestamp_us,
            width,
            height,
            pixels,
        })
    }
}

/// Converts a video into events by per-pixel threshold crossings of
/// `log(I + 1)`.
///
/// Each pixel keeps a reference log level initialised from the first frame.
/// When a later frame moves a pixel `n >= 1` thresholds away from its
/// reference, `n` events of the matching polarity are emitted at that frame's
/// timestamp and the reference moves by `n` thresholds. Events sharing a
/// timestamp come out in row-major pixel order.
pub fn video_to_events(frames: &[GrayFrame], config: &EncoderConfig) -> Result<EventStream> {
    config.validate()?;
    if frames.len() < 2 {
        return Err(Error::InsufficientInput(format!(
            "event emulation needs at least 2 frames, got {}",
            frames.len()
        )));
    }
    let (w, h) = (frames[0].width, frames[0].height);
    if w == 0 || h == 0 || w > u16::MAX as usize || h > u16::MAX as usize {
        return Err(Error::Format(format!("unsupported frame size {w}x{h}")));
    }
    for (i, f) in frames.iter().enumerate() {
        if (f.width, f.height) != (w, h) || f.pixels.len() != w * h {
            return Err(Error::Format(format!(
                "frame {i} is {}x{}, expected {w}x{h}",
                f.width, f.height
            )));
        }
        if let Some(bad) = f.pixels.iter().find(|p| !(0.0..=255.0).contains(*p)) {
            return Err(Error::Format(format!("frame {i} has pixel value {bad} outside [0, 255]")));
        }
        if i > 0 && f.timestamp_us <= frames[i - 1].timestamp_us {
            return Err(Error::Format(format!("frame {i} timestamp is not increasing")));
        }
    }

    let c = config.dvs_threshold;
    let mut reference: Vec<f64> = frames[0]
        .pixels
        .iter()
        .map(|&p| (p as f64 + LOG_EPSILON).ln())
        .collect();
    let mut events = Vec::new();
    for f in &frames[1..] {
        for (idx, (&p, r)) in f.pixels.iter().zip(reference.iter_mut()).enumerate() {
            let diff = (p as f64 + LOG_EPSILON).ln() - *r;
            let crossings = (diff.abs() / c).floor();
            if crossings < 1.0 {
                continue;
            }
            let polarity: i8 = if diff > 0.0 { 1 } else { -1 };
            let (x, y) = ((idx % w) as u16, (idx / w) as u16);
            for _ in 0..crossings as u64 {
                events.push(Event {
                    t: f.timestamp_us,
                    x,
                    y,
                    polarity,
                });
            }
            *r += polarity as f64 * crossings * c;
        }
    }
    Ok(EventStream {
        width: w as u16,
        height: h as u16,
        events,
    })
}
