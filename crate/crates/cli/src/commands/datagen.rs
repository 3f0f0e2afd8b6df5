use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use serde_json::json;

use evhar::datagen::{generate, SynthConfig};

use super::{run_recorded, sibling_manifest, Resolution};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Args, Serialize)]
pub struct DatagenArgs {
    /// Dataset root to create.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub per_class: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Uniform noise events per 30 fps window.
    #[arg(long, default_value_t = 20)]
    pub noise: usize,
    #[arg(long, default_value = "128x128")]
    pub res: Resolution,
    /// Multiplies the emulator's event rate.
    #[arg(long, default_value_t = 1.0)]
    pub event_rate_scale: f64,
    /// Clip duration in seconds.
    #[arg(long, default_value_t = 1.0)]
    pub duration: f64,
}

pub fn datagen(args: DatagenArgs, manifest: Option<PathBuf>) -> CliResult<()> {
    if args.per_class == 0 {
        return Err(CliError::Usage("--per-class must be at least 1".into()));
    }
    let config = SynthConfig {
        samples_per_class: args.per_class,
        resolution: args.res.into(),
        duration_s: args.duration,
        event_rate_scale: args.event_rate_scale,
        noise_events_per_frame: args.noise,
        seed: args.seed,
        ..SynthConfig::default()
    };
    config.validate()?;
    let location = manifest.unwrap_or_else(|| sibling_manifest(&args.out));
    let outputs = [args.out.clone()];
    run_recorded(location, "datagen", Some(args.seed), &args, &outputs, || {
        let description = generate(&config, &args.out)?;
        println!("{:<18} {:>6} {:>12} {:>8}", "class", "clips", "density", "frames");
        for c in &description.classes {
            let frames = if c.min_frames == c.max_frames {
                c.min_frames.to_string()
            } else {
                format!("{}-{}", c.min_frames, c.max_frames)
            };
            println!("{:<18} {:>6} {:>12.5} {:>8}", c.name, c.count, c.mean_density, frames);
        }
        if let Some(w) = &description.warning {
            log::warn!("{w}");
        }
        let classes: Vec<_> = description
            .classes
            .iter()
            .map(|c| json!({"name": c.name, "count": c.count, "mean_density": c.mean_density}))
            .collect();
        Ok(json!({ "classes": classes }))
    })
}
