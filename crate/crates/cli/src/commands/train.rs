use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;
use serde_json::{json, Value};

use evhar::event_codec::io::{dequantize, quantize, read_evs1};
use evhar::event_codec::{encode_clip, AccumulationMode, ClipTensor, EncoderConfig};
use evhar::model::{infer as forward_eval, load_checkpoint, Checkpoint, Metadata, ModelConfig};
use evhar::training::{
    class_weights, evaluate, load_dataset, load_sequence, output_paths, stratified_split, train as fit,
    write_confusion_csv, Dataset, FocalLossConfig, OptimizerConfig, SplitFractions, TrainConfig, TrainReport,
};
use evhar_tensor::softmax;

use super::{ensure_outside, run_recorded, Resolution};
use crate::error::{CliError, CliResult};
use crate::manifest::MANIFEST_FILE;

/// Model and optimisation settings shared by `train` and `ablate`.
#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainOptions {
    /// Maximum epochs.
    #[arg(long, default_value_t = 1000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.0009)]
    pub lr: f64,
    /// Decoupled weight decay.
    #[arg(long, default_value_t = 1e-4)]
    pub wd: f64,
    /// Focal-loss focusing exponent.
    #[arg(long, default_value_t = 2.0)]
    pub gamma: f64,
    /// Epochs without a validation-F1 improvement before stopping.
    #[arg(long, default_value_t = 100)]
    pub patience: usize,
    #[arg(long, default_value_t = 1.0)]
    pub channel_mult: f64,
    /// Frames per clip; sequences are re-sampled at load time.
    #[arg(long, default_value_t = 10)]
    pub frames: usize,
    /// Enable channel attention after the last block.
    #[arg(long, num_args = 0..=1, default_value_t = false, default_missing_value = "true")]
    pub attention: bool,
    #[arg(long, default_value_t = 0.5)]
    pub dropout: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "128x128")]
    pub res: Resolution,
    /// Comma-separated class names to augment, or `none`.
    /// Defaults to the classes matching "Eating" and "Washing up".
    #[arg(long)]
    pub augment_classes: Option<String>,
}

impl TrainOptions {
    pub fn model_config(&self, num_classes: usize) -> ModelConfig {
        ModelConfig {
            num_classes,
            clip_length: self.frames,
            input_resolution: self.res.into(),
            dropout_rate: self.dropout,
            attention_enabled: self.attention,
            channel_multiplier: self.channel_mult,
            ..ModelConfig::default()
        }
    }

    pub fn train_config(&self, classes: &[String]) -> CliResult<TrainConfig> {
        let augmentation_classes = match self.augment_classes.as_deref() {
            None => None,
            Some("none") | Some("") => Some(BTreeSet::new()),
            Some(list) => Some(
                list.split(',')
                    .map(|name| {
                        classes.iter().position(|c| c == name.trim()).ok_or_else(|| {
                            CliError::Usage(format!("--augment-classes names unknown class {name:?}"))
                        })
                    })
                    .collect::<CliResult<BTreeSet<_>>>()?,
            ),
        };
        Ok(TrainConfig {
            batch_size: self.batch,
            max_epochs: self.epochs,
            patience: self.patience,
            fractions: SplitFractions::default(),
            seed: self.seed,
            augmentation_classes,
            focal_gamma: self.gamma,
            optimizer: OptimizerConfig {
                learning_rate: self.lr,
                weight_decay: self.wd,
                ..OptimizerConfig::default()
            },
        })
    }

    /// Checks everything that does not need the dataset.
    pub fn validate(&self) -> CliResult<()> {
        self.model_config(1).validate()?;
        self.train_config(&[])?.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    /// Dataset root: one directory per class holding clip directories.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "runs/train")]
    pub out: PathBuf,
    /// Also render the test confusion matrix as `confusion.pgm`.
    #[arg(long)]
    pub heatmap: bool,
    #[command(flatten)]
    pub options: TrainOptions,
}

/// Row-normalised confusion matrix, 16 pixels per cell.
pub fn write_heatmap(path: &Path, confusion: &[Vec<usize>]) -> CliResult<()> {
    const CELL: usize = 16;
    let k = confusion.len();
    let side = k * CELL;
    let mut pixels = vec![0u8; side * side];
    for (r, row) in confusion.iter().enumerate() {
        let total: usize = row.iter().sum();
        for (c, &n) in row.iter().enumerate() {
            let v = if total == 0 { 0.0 } else { n as f32 / total as f32 };
            for y in r * CELL..(r + 1) * CELL {
                pixels[y * side + c * CELL..y * side + (c + 1) * CELL].fill(quantize(v));
            }
        }
    }
    let img = evhar::event_codec::io::Pgm {
        width: side,
        height: side,
        pixels,
    };
    Ok(evhar::event_codec::io::write_pgm(path, &img)?)
}

pub fn report_json(report: &TrainReport) -> Value {
    json!({
        "classes": report.classes,
        "test_accuracy": report.test.accuracy,
        "test_f1": report.test.weighted_f1,
        "test_loss": report.test_loss,
        "confusion": report.test.confusion,
        "parameter_count": report.parameter_count,
        "best_epoch": report.best_epoch,
        "best_val_f1": report.best_val_f1,
        "best_val_loss": report.best_val_loss,
        "epochs_run": report.epochs.len(),
        "minutes": report.minutes,
    })
}

/// Loads the dataset and trains one configuration into `out`.
pub fn train_into(data: &Path, out: &Path, options: &TrainOptions, heatmap: bool) -> CliResult<TrainReport> {
    let dataset = load_dataset(data, options.frames, options.res.into())?;
    let model = options.model_config(dataset.classes.len());
    let config = options.train_config(&dataset.classes)?;
    let outcome = fit(&dataset, &model, &config, Some(out))?;
    if heatmap {
        write_heatmap(&out.join("confusion.pgm"), &outcome.report.test.confusion)?;
    }
    Ok(outcome.report)
}

pub fn train(args: TrainArgs, manifest: Option<PathBuf>) -> CliResult<()> {
    args.options.validate()?;
    ensure_outside(&args.data, &args.out)?;
    fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;
    let (ckpt, log_csv, confusion) = output_paths(&args.out);
    let mut outputs = vec![ckpt, log_csv, confusion];
    if args.heatmap {
        outputs.push(args.out.join("confusion.pgm"));
    }
    let location = manifest.unwrap_or_else(|| args.out.join(MANIFEST_FILE));
    run_recorded(location, "train", Some(args.options.seed), &args, &outputs, || {
        let report = train_into(&args.data, &args.out, &args.options, args.heatmap)?;
        println!("test accuracy   {:.4}", report.test.accuracy);
        println!("test weighted F1 {:.4}", report.test.weighted_f1);
        println!("parameters      {}", report.parameter_count);
        println!("best epoch      {} of {}", report.best_epoch, report.epochs.len());
        println!("minutes         {:.2}", report.minutes);
        Ok(report_json(&report))
    })
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset root the checkpoint was trained on.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory (default: `eval/` next to the checkpoint).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub heatmap: bool,
}

fn meta<'a>(metadata: &'a Metadata, key: &str) -> CliResult<&'a str> {
    metadata
        .get(key)
        .map(String::as_str)
        .ok_or_else(|| CliError::Core(evhar::Error::IncompatibleCheckpoint(format!("metadata lacks {key}"))))
}

fn meta_parse<T: std::str::FromStr>(metadata: &Metadata, key: &str) -> CliResult<T> {
    let raw = meta(metadata, key)?;
    raw.parse()
        .map_err(|_| CliError::Core(evhar::Error::IncompatibleCheckpoint(format!("bad metadata {key}={raw}"))))
}

fn class_names(ckpt: &Checkpoint<f32>) -> Vec<String> {
    (0..ckpt.config.num_classes)
        .map(|i| {
            ckpt.metadata
                .get(&format!("class.{i}"))
                .cloned()
                .unwrap_or_else(|| format!("class{i}"))
        })
        .collect()
}

fn parse_fractions(raw: &str) -> CliResult<SplitFractions> {
    let parts: Vec<f64> = raw.split(',').filter_map(|v| v.trim().parse().ok()).collect();
    match parts[..] {
        [train, val, test] => Ok(SplitFractions { train, val, test }),
        _ => Err(CliError::Core(evhar::Error::IncompatibleCheckpoint(format!(
            "bad metadata split={raw}"
        )))),
    }
}

pub fn eval(args: EvalArgs, manifest: Option<PathBuf>) -> CliResult<()> {
    let out = args.out.clone().unwrap_or_else(|| {
        args.checkpoint
            .parent()
            .unwrap_or(Path::new("."))
            .join("eval")
    });
    ensure_outside(&args.data, &out)?;
    fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    let mut outputs = vec![out.join("confusion.csv")];
    if args.heatmap {
        outputs.push(out.join("confusion.pgm"));
    }
    let location = manifest.unwrap_or_else(|| out.join(MANIFEST_FILE));
    run_recorded(location, "eval", None, &args, &outputs, || {
        let ckpt = load_checkpoint::<f32>(&args.checkpoint)?;
        let classes = class_names(&ckpt);
        let dataset = load_dataset(&args.data, ckpt.config.clip_length, ckpt.config.input_resolution)?;
        if dataset.classes != classes {
            return Err(evhar::Error::IncompatibleCheckpoint(format!(
                "dataset classes {:?} differ from checkpoint classes {classes:?}",
                dataset.classes
            ))
            .into());
        }
        let seed: u64 = meta_parse(&ckpt.metadata, "seed")?;
        let batch: usize = meta_parse(&ckpt.metadata, "batch_size")?;
        let gamma: f64 = meta_parse(&ckpt.metadata, "focal_gamma")?;
        let fractions = parse_fractions(meta(&ckpt.metadata, "split")?)?;
        let split = stratified_split(&dataset.labels(), classes.len(), fractions, seed)?;
        let alpha = class_weights(&dataset.class_counts(&split.train))?;
        let focal = FocalLossConfig::new(gamma, alpha)?;
        let result = evaluate(&ckpt.params, &ckpt.config, &dataset, &split.test, &focal, batch)?;
        write_confusion_csv(&outputs[0], &result.metrics.confusion)?;
        if args.heatmap {
            write_heatmap(&outputs[1], &result.metrics.confusion)?;
        }
        println!("test clips       {}", split.test.len());
        println!("test accuracy    {:.4}", result.metrics.accuracy);
        println!("test weighted F1 {:.4}", result.metrics.weighted_f1);
        Ok(json!({
            "classes": classes,
            "test_clips": split.test.len(),
            "test_accuracy": result.metrics.accuracy,
            "test_f1": result.metrics.weighted_f1,
            "test_loss": result.loss,
            "confusion": result.metrics.confusion,
        }))
    })
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// A clip directory of event frames, or an EVS1 event file.
    #[arg(long)]
    pub sequence: PathBuf,
    /// Event frames per second when encoding an EVS1 file.
    #[arg(long, default_value_t = 30.0)]
    pub fps: f64,
    /// Accumulation mode when encoding an EVS1 file.
    #[arg(long, default_value = "polarity_sum")]
    pub mode: String,
}

fn load_input(args: &InferArgs, model: &ModelConfig) -> CliResult<ClipTensor> {
    let (h, w) = model.input_resolution;
    if args.sequence.is_dir() {
        let pixels = load_sequence(&args.sequence, model.clip_length, (h, w))?;
        return Ok(ClipTensor {
            frames: model.clip_length,
            height: h,
            width: w,
            values: pixels.into_iter().map(dequantize).collect(),
        });
    }
    let mode: AccumulationMode = args.mode.parse()?;
    let config = EncoderConfig {
        accumulation_rate: args.fps,
        clip_length: model.clip_length,
        target_resolution: (h, w),
        accumulation_mode: mode,
        ..EncoderConfig::default()
    };
    let stream = read_evs1(&args.sequence)?;
    let mut clip = encode_clip(&stream, &config)?;
    // Same 8-bit quantisation as clips read from disk.
    for v in &mut clip.values {
        *v = dequantize(quantize(*v));
    }
    Ok(clip)
}

pub fn infer(args: InferArgs, manifest: Option<PathBuf>) -> CliResult<()> {
    let location = manifest.unwrap_or_else(|| PathBuf::from(MANIFEST_FILE));
    run_recorded(location, "infer", None, &args, &[], || {
        let ckpt = load_checkpoint::<f32>(&args.checkpoint)?;
        let classes = class_names(&ckpt);
        let clip = load_input(&args, &ckpt.config)?;
        let x = Dataset::batch::<f32>(&[clip])?;
        let logits = forward_eval(&ckpt.params, &ckpt.config, &x)?;
        let probs = softmax(&logits).map_err(evhar::Error::from)?;
        let probs: Vec<f64> = probs.data().iter().map(|&p| p as f64).collect();
        let best = probs
            .iter()
            .enumerate()
            .fold(0, |b, (i, &p)| if p > probs[b] { i } else { b });
        for (name, p) in classes.iter().zip(&probs) {
            println!("{name:<18} {p:.6}");
        }
        println!("prediction: {}", classes[best]);
        Ok(json!({
            "probabilities": classes.iter().zip(&probs).map(|(n, p)| json!({"class": n, "p": p})).collect::<Vec<_>>(),
            "prediction": classes[best],
        }))
    })
}
