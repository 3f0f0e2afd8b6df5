//! Seeded synthetic dataset of moving-blob event clips in six classes:
//! four translation directions, expansion and contraction.
//!
//! Each sample renders a soft disk over a flat background at a high frame
//! rate, converts the video to events with the DVS emulator, adds uniform
//! noise events and accumulates the result into 30 fps event frames written
//! in the clip-directory dataset layout.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::event_codec::io::{
    read_clip_dir, scan_dataset, write_clip_dir, Pgm,
};
use crate::event_codec::{accumulate_events, video_to_events, EncoderConfig, Event, EventStream, GrayFrame};
use crate::{rng, Error, Result};

/// Class directory names in label order.
pub const CLASSES: [&str; 6] = [
    "contract",
    "expand",
    "translate-down",
    "translate-left",
    "translate-right",
    "translate-up",
];
pub const GENERATOR_VERSION: &str = "evhar-datagen 1";

const BACKGROUND: f64 = 50.0;
const FOREGROUND: f64 = 200.0;
const EDGE_WIDTH: f64 = 1.5;
const BASE_THRESHOLD: f64 = 0.2;
/// Sub-pixel grid for positions and per-frame steps, so mirrored
/// trajectories are exact in floating point.
const GRID: f64 = 1024.0;
const MARGIN: f64 = 4.0;

const TRANSLATE_SPEED: f64 = 48.0;
const TRANSLATE_RADIUS: (f64, f64) = (8.0, 14.0);
const RADIUS_RATE: f64 = 20.0;
/// Smallest radius of expanding and contracting blobs.
const RADIAL_MIN: (f64, f64) = (6.0, 10.0);
const SPEED_JITTER: f64 = 0.3;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub samples_per_class: usize,
    /// `(height, width)`.
    pub resolution: (usize, usize),
    pub duration_s: f64,
    /// Divides the DVS contrast threshold; larger values give more events.
    pub event_rate_scale: f64,
    pub noise_events_per_frame: usize,
    pub seed: u64,
    /// Rate of the rendered intensity video.
    pub render_fps: f64,
    /// Rate of the stored event frames.
    pub output_fps: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            samples_per_class: 200,
            resolution: (128, 128),
            duration_s: 1.0,
            event_rate_scale: 1.0,
            noise_events_per_frame: 20,
            seed: 0,
            render_fps: 240.0,
            output_fps: 30.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples_per_class == 0 {
            return Err(Error::Config("samples per class must be >= 1".into()));
        }
        for (name, v) in [
            ("duration", self.duration_s),
            ("event rate scale", self.event_rate_scale),
            ("render fps", self.render_fps),
            ("output fps", self.output_fps),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        let (h, w) = self.resolution;
        let need = self.min_extent();
        if h < need || w < need || h > u16::MAX as usize || w > u16::MAX as usize {
            return Err(Error::Config(format!(
                "resolution {h}x{w} cannot hold the trajectories; need at least {need}x{need}"
            )));
        }
        if self.render_frames() < 2 {
            return Err(Error::Config("clip too short for two rendered frames".into()));
        }
        Ok(())
    }

    /// Smallest sensor side that fits every class's trajectory.
    pub fn min_extent(&self) -> usize {
        let fastest = 1.0 + SPEED_JITTER;
        let travel = TRANSLATE_SPEED * fastest * self.duration_s;
        let translate = 1.0 + 2.0 * (TRANSLATE_RADIUS.1 + MARGIN) + travel;
        let radial = 1.0 + 2.0 * (RADIAL_MIN.1 + RADIUS_RATE * fastest * self.duration_s + MARGIN);
        translate.max(radial).ceil() as usize
    }

    fn render_frames(&self) -> usize {
        (self.duration_s * self.render_fps).round() as usize + 1
    }

    fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            accumulation_rate: self.output_fps,
            dvs_threshold: BASE_THRESHOLD / self.event_rate_scale,
            ..EncoderConfig::default()
        }
    }
}

/// Motion of one blob, in pixels and pixels per rendered frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trajectory {
    pub x0: f64,
    pub y0: f64,
    pub dx: f64,
    pub dy: f64,
    pub r0: f64,
    pub dr: f64,
}

impl Trajectory {
    /// Horizontal mirror image on a sensor `width` pixels wide.
    pub fn mirrored(&self, width: usize) -> Self {
        Trajectory {
            x0: (width - 1) as f64 - self.x0,
            dx: -self.dx,
            ..*self
        }
    }
}

fn snap(v: f64) -> f64 {
    (v * GRID).round() / GRID
}

/// Draws the trajectory of sample `index` of class `class`.
pub fn sample_trajectory(class: usize, index: usize, config: &SynthConfig) -> Trajectory {
    let mut r = rng::stream(config.seed, &[class as u64, index as u64]);
    let (h, w) = (config.resolution.0 as f64, config.resolution.1 as f64);
    let steps = (config.render_frames() - 1) as f64;
    let jitter = |r: &mut rand_chacha::ChaCha8Rng| r.gen_range(1.0 - SPEED_JITTER..=1.0 + SPEED_JITTER);
    match CLASSES[class] {
        "expand" | "contract" => {
            let expand = CLASSES[class] == "expand";
            let rate = RADIUS_RATE * jitter(&mut r) * config.duration_s;
            // Contraction is expansion played backwards.
            let smallest = r.gen_range(RADIAL_MIN.0..=RADIAL_MIN.1);
            let widest = smallest + rate;
            let r0 = if expand { smallest } else { widest };
            let x0 = r.gen_range(widest + MARGIN..=w - 1.0 - widest - MARGIN);
            let y0 = r.gen_range(widest + MARGIN..=h - 1.0 - widest - MARGIN);
            let dr = if expand { rate } else { -rate } / steps;
            Trajectory {
                x0: snap(x0),
                y0: snap(y0),
                dx: 0.0,
                dy: 0.0,
                r0: snap(r0),
                dr: snap(dr),
            }
        }
        name => {
            let travel = TRANSLATE_SPEED * jitter(&mut r) * config.duration_s;
            let radius = r.gen_range(TRANSLATE_RADIUS.0..=TRANSLATE_RADIUS.1);
            let lo = radius + MARGIN;
            let (dir_x, dir_y) = match name {
                "translate-left" => (-1.0, 0.0),
                "translate-right" => (1.0, 0.0),
                "translate-up" => (0.0, -1.0),
                _ => (0.0, 1.0),
            };
            let span = |extent: f64, d: f64, r: &mut rand_chacha::ChaCha8Rng| {
                let hi = extent - 1.0 - lo;
                if d > 0.0 {
                    r.gen_range(lo..=hi - travel)
                } else if d < 0.0 {
                    r.gen_range(lo + travel..=hi)
                } else {
                    r.gen_range(lo..=hi)
                }
            };
            let x0 = span(w, dir_x, &mut r);
            let y0 = span(h, dir_y, &mut r);
            Trajectory {
                x0: snap(x0),
                y0: snap(y0),
                dx: snap(dir_x * travel / steps),
                dy: snap(dir_y * travel / steps),
                r0: snap(radius),
                dr: 0.0,
            }
        }
    }
}

fn render_frame(t: &Trajectory, k: usize, config: &SynthConfig, timestamp_us: u64) -> GrayFrame {
    let (h, w) = config.resolution;
    let kf = k as f64;
    let (cx, cy, radius) = (t.x0 + t.dx * kf, t.y0 + t.dy * kf, t.r0 + t.dr * kf);
    let mut pixels = Vec::with_capacity(h * w);
    for y in 0..h {
        let ey = y as f64 - cy;
        for x in 0..w {
            let ex = x as f64 - cx;
            let d = (ex * ex + ey * ey).sqrt();
            let a = ((radius - d) / EDGE_WIDTH + 0.5).clamp(0.0, 1.0);
            pixels.push((BACKGROUND + (FOREGROUND - BACKGROUND) * a) as f32);
        }
    }
    GrayFrame {
        timestamp_us,
        width: w,
        height: h,
        pixels,
    }
}

/// Noise-free event stream of a trajectory.
pub fn render_trajectory(t: &Trajectory, config: &SynthConfig) -> Result<EventStream> {
    config.validate()?;
    let n = config.render_frames();
    let steps = (n - 1) as f64;
    let duration_us = config.duration_s * 1e6;
    let frames: Vec<GrayFrame> = (0..n)
        .map(|k| {
            let ts = (k as f64 * duration_us / steps).round() as u64;
            render_frame(t, k, config, ts)
        })
        .collect();
    video_to_events(&frames, &config.encoder())
}

/// Events of sample `index` of class `class`, including noise.
pub fn sample_events(class: usize, index: usize, config: &SynthConfig) -> Result<EventStream> {
    let t = sample_trajectory(class, index, config);
    let mut stream = render_trajectory(&t, config)?;
    let mut r = rng::stream(config.seed, &[class as u64, index as u64, 0x4015e]);
    let (h, w) = config.resolution;
    let duration_us = (config.duration_s * 1e6).round() as u64;
    let windows = (config.duration_s * config.output_fps).round().max(1.0) as u64;
    for win in 0..windows {
        let (start, end) = (win * duration_us / windows, (win + 1) * duration_us / windows);
        for _ in 0..config.noise_events_per_frame {
            stream.events.push(Event {
                t: r.gen_range(start..end.max(start + 1)),
                x: r.gen_range(0..w) as u16,
                y: r.gen_range(0..h) as u16,
                polarity: if r.gen_bool(0.5) { 1 } else { -1 },
            });
        }
    }
    stream.events.sort_by_key(|e| e.t);
    stream.validate()?;
    Ok(stream)
}

/// Accumulated event frames of a stream, quantized to 8 bits.
pub fn stream_to_pgms(stream: &EventStream, config: &SynthConfig) -> Result<Vec<Pgm>> {
    let frames = accumulate_events(stream, &config.encoder())?;
    Ok(frames.iter().map(Pgm::from).collect())
}

pub fn sequence_name(index: usize) -> String {
    format!("seq_{index:04}")
}

/// Writes the dataset under `root` and a `manifest.txt` describing it.
pub fn generate(config: &SynthConfig, root: &Path) -> Result<DatasetDescription> {
    config.validate()?;
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let jobs: Vec<(usize, usize)> = (0..CLASSES.len())
        .flat_map(|c| (0..config.samples_per_class).map(move |i| (c, i)))
        .collect();
    jobs.par_iter().try_for_each(|&(c, i)| -> Result<()> {
        let stream = sample_events(c, i, config)?;
        let frames = stream_to_pgms(&stream, config)?;
        let dir = root.join(CLASSES[c]).join(sequence_name(i));
        write_clip_dir(&dir, &frames, config.output_fps)
    })?;
    let mut manifest = String::new();
    let (h, w) = config.resolution;
    writeln!(manifest, "generator={GENERATOR_VERSION}").ok();
    writeln!(manifest, "seed={}", config.seed).ok();
    writeln!(manifest, "samples_per_class={}", config.samples_per_class).ok();
    writeln!(manifest, "noise_events_per_frame={}", config.noise_events_per_frame).ok();
    writeln!(manifest, "event_rate_scale={}", config.event_rate_scale).ok();
    writeln!(manifest, "duration_s={}", config.duration_s).ok();
    writeln!(manifest, "resolution={h}x{w}").ok();
    writeln!(manifest, "classes={}", CLASSES.join(",")).ok();
    for name in CLASSES {
        writeln!(manifest, "count.{name}={}", config.samples_per_class).ok();
    }
    let path = root.join("manifest.txt");
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    describe(root)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats {
    pub name: String,
    pub count: usize,
    /// Mean fraction of active pixels over all frames of the class.
    pub mean_density: f64,
    pub min_frames: usize,
    pub max_frames: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetDescription {
    pub classes: Vec<ClassStats>,
    /// Set when the tree is readable but holds nothing to train on.
    pub warning: Option<String>,
}

impl DatasetDescription {
    pub fn counts(&self) -> Vec<usize> {
        self.classes.iter().map(|c| c.count).collect()
    }
}

/// Per-class counts, frame-count range and mean event-frame density.
pub fn describe(root: &Path) -> Result<DatasetDescription> {
    let index = scan_dataset(root)?;
    let per_seq = index
        .sequences
        .par_iter()
        .map(|(dir, label)| {
            let clip = read_clip_dir(dir)?;
            let active: usize = clip
                .frames
                .iter()
                .map(|f| f.pixels.iter().filter(|&&p| p > 0).count())
                .sum();
            let cells: usize = clip.frames.iter().map(|f| f.pixels.len()).sum();
            Ok((*label, clip.frames.len(), active as f64 / cells.max(1) as f64))
        })
        .collect::<Result<Vec<_>>>()?;
    let classes: Vec<ClassStats> = index
        .classes
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let mine: Vec<_> = per_seq.iter().filter(|s| s.0 == c).collect();
            ClassStats {
                name: name.clone(),
                count: mine.len(),
                mean_density: if mine.is_empty() {
                    0.0
                } else {
                    mine.iter().map(|s| s.2).sum::<f64>() / mine.len() as f64
                },
                min_frames: mine.iter().map(|s| s.1).min().unwrap_or(0),
                max_frames: mine.iter().map(|s| s.1).max().unwrap_or(0),
            }
        })
        .collect();
    let warning = if classes.is_empty() {
        Some(format!("{} contains no class directories", root.display()))
    } else if let Some(c) = classes.iter().find(|c| c.count == 0) {
        Some(format!("class {} has no sequences", c.name))
    } else {
        None
    };
    Ok(DatasetDescription { classes, warning })
}
