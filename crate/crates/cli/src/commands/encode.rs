use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;
use serde_json::json;

use evhar::event_codec::io::{read_clip_dir, read_evs1, write_clip_dir, Pgm};
use evhar::event_codec::{
    encode_clip, video_to_events, AccumulationMode, EncoderConfig, EventFrame, EventStream, GrayFrame,
};

use super::{run_recorded, sibling_manifest, Resolution};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Args, Serialize)]
pub struct EncodeArgs {
    /// An EVS1 event file, or a clip directory of grayscale video frames.
    #[arg(long)]
    pub input: PathBuf,
    /// Clip directory to write.
    #[arg(long)]
    pub output: PathBuf,
    /// Event frames per second.
    #[arg(long, default_value_t = 30.0)]
    pub fps: f64,
    /// Frames per clip.
    #[arg(long, default_value_t = 10)]
    pub frames: usize,
    #[arg(long, default_value = "128x128")]
    pub res: Resolution,
    /// `polarity_sum` or `count`.
    #[arg(long, default_value = "polarity_sum")]
    pub mode: String,
    /// Log-intensity contrast threshold for video input.
    #[arg(long, default_value_t = 0.2)]
    pub threshold: f64,
}

fn load_stream(input: &Path, config: &EncoderConfig) -> CliResult<EventStream> {
    if input.is_dir() {
        let clip = read_clip_dir(input)?;
        let step_us = 1e6 / clip.fps;
        let frames = clip
            .frames
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let pixels = p.pixels.iter().map(|&v| v as f32).collect();
                GrayFrame::new((i as f64 * step_us).round() as u64, p.width, p.height, pixels)
            })
            .collect::<evhar::Result<Vec<_>>>()?;
        Ok(video_to_events(&frames, config)?)
    } else if input.is_file() {
        Ok(read_evs1(input)?)
    } else {
        Err(CliError::Usage(format!("{} does not exist", input.display())))
    }
}

pub fn encode(args: EncodeArgs, manifest: Option<PathBuf>) -> CliResult<()> {
    let mode: AccumulationMode = args.mode.parse()?;
    let config = EncoderConfig {
        accumulation_rate: args.fps,
        clip_length: args.frames,
        target_resolution: args.res.into(),
        dvs_threshold: args.threshold,
        accumulation_mode: mode,
    };
    config.validate()?;
    let location = manifest.unwrap_or_else(|| sibling_manifest(&args.output));
    let outputs = [args.output.clone()];
    run_recorded(location, "encode", None, &args, &outputs, || {
        let stream = load_stream(&args.input, &config)?;
        if stream.is_empty() {
            log::warn!("{} holds no events; writing all-zero frames", args.input.display());
        }
        let clip = encode_clip(&stream, &config)?;
        let frames: Vec<EventFrame> = (0..clip.frames)
            .map(|t| EventFrame {
                width: clip.width,
                height: clip.height,
                values: clip.frame(t).to_vec(),
            })
            .collect();
        let pgms: Vec<Pgm> = frames.iter().map(Pgm::from).collect();
        write_clip_dir(&args.output, &pgms, args.fps)?;
        let densities: Vec<f64> = frames.iter().map(EventFrame::density).collect();
        let mean = densities.iter().sum::<f64>() / densities.len() as f64;
        println!(
            "encoded {} events into {} frames ({}) at {}",
            stream.len(),
            frames.len(),
            args.res,
            args.output.display()
        );
        for (t, d) in densities.iter().enumerate() {
            println!("frame {t:>3}  density {d:.5}");
        }
        println!("mean density {mean:.5}");
        Ok(json!({
            "events": stream.len(),
            "frames": frames.len(),
            "densities": densities,
            "mean_density": mean,
        }))
    })
}
