//! Event streams, DVS emulation and clip encoding.

mod encode;
pub mod io;
mod simulate;

pub use encode::{accumulate_events, downsample_indices, encode_clip, resize_pad, uniform_downsample};
pub use simulate::{video_to_events, GrayFrame, LOG_EPSILON};

use crate::{Error, Result};

/// One brightness-change record. `t` is in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub t: u64,
    pub x: u16,
    pub y: u16,
    /// `+1` brighter, `-1` darker.
    pub polarity: i8,
}

/// Events from one sensor, sorted by timestamp.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    pub width: u16,
    pub height: u16,
    pub events: Vec<Event>,
}

impl EventStream {
    pub fn new(width: u16, height: u16, events: Vec<Event>) -> Result<Self> {
        let stream = EventStream {
            width,
            height,
            events,
        };
        stream.validate()?;
        Ok(stream)
    }

    pub fn empty(width: u16, height: u16) -> Self {
        EventStream {
            width,
            height,
            events: Vec::new(),
        }
    }

    /// Checks resolution, coordinate range, polarity values and time order.
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Format(format!(
                "sensor resolution {}x{} has zero area",
                self.width, self.height
            )));
        }
        let mut last = 0u64;
        for (i, e) in self.events.iter().enumerate() {
            if e.x >= self.width || e.y >= self.height {
                return Err(Error::Format(format!(
                    "event {i} at ({}, {}) outside {}x{} sensor",
                    e.x, e.y, self.width, self.height
                )));
            }
            if e.polarity != 1 && e.polarity != -1 {
                return Err(Error::Format(format!(
                    "event {i} has polarity {}, expected +1 or -1",
                    e.polarity
                )));
            }
            if e.t < last {
                return Err(Error::Format(format!("event {i} is out of time order")));
            }
            last = e.t;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// A 2-D accumulation of events, row-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventFrame {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
}

impl EventFrame {
    pub fn zeros(width: usize, height: usize) -> Self {
        EventFrame {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    /// Fraction of cells holding any activity.
    pub fn density(&self) -> f64 {
        let active = self.values.iter().filter(|&&v| v > 0.0).count();
        active as f64 / self.values.len().max(1) as f64
    }
}

/// A single-channel clip `(1, T, H, W)` ready for the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipTensor {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl ClipTensor {
    pub fn zeros(frames: usize, height: usize, width: usize) -> Self {
        ClipTensor {
            frames,
            height,
            width,
            values: vec![0.0; frames * height * width],
        }
    }

    pub fn from_frames(frames: &[EventFrame]) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::InsufficientInput("clip needs at least one frame".into()))?;
        let (h, w) = (first.height, first.width);
        let mut values = Vec::with_capacity(frames.len() * h * w);
        for f in frames {
            if (f.height, f.width) != (h, w) {
                return Err(Error::Format(format!(
                    "frame is {}x{}, clip is {}x{}",
                    f.width, f.height, w, h
                )));
            }
            values.extend_from_slice(&f.values);
        }
        Ok(ClipTensor {
            frames: frames.len(),
            height: h,
            width: w,
            values,
        })
    }

    /// `(channels, frames, height, width)`.
    pub fn shape(&self) -> [usize; 4] {
        [1, self.frames, self.height, self.width]
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.values[t * n..(t + 1) * n]
    }

    pub fn is_normalized(&self) -> bool {
        self.values.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AccumulationMode {
    /// Number of events per pixel.
    Count,
    /// Absolute value of the summed polarities per pixel.
    PolaritySum,
}

impl std::str::FromStr for AccumulationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "count" => Ok(AccumulationMode::Count),
            "polarity_sum" | "polarity-sum" => Ok(AccumulationMode::PolaritySum),
            other => Err(Error::Config(format!(
                "unknown accumulation mode {other:?} (expected count or polarity_sum)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    /// Event frames per second.
    pub accumulation_rate: f64,
    /// Frames per clip.
    pub clip_length: usize,
    /// `(height, width)` of encoded frames.
    pub target_resolution: (usize, usize),
    /// Log-intensity contrast threshold of the DVS emulator.
    pub dvs_threshold: f64,
    pub accumulation_mode: AccumulationMode,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            accumulation_rate: 30.0,
            clip_length: 10,
            target_resolution: (128, 128),
            dvs_threshold: 0.2,
            accumulation_mode: AccumulationMode::PolaritySum,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.accumulation_rate > 0.0 && self.accumulation_rate.is_finite()) {
            return Err(Error::Config("accumulation rate must be > 0".into()));
        }
        if self.clip_length == 0 {
            return Err(Error::Config("clip length must be >= 1".into()));
        }
        if !(self.dvs_threshold > 0.0 && self.dvs_threshold.is_finite()) {
            return Err(Error::Config("DVS threshold must be > 0".into()));
        }
        if self.target_resolution.0 == 0 || self.target_resolution.1 == 0 {
            return Err(Error::Config("target resolution has zero area".into()));
        }
        Ok(())
    }
}
