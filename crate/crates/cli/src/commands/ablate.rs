use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser};
use serde::Serialize;
use serde_json::{json, Value};

use super::train::{train_into, TrainOptions};
use super::{ensure_outside, run_recorded};
use crate::error::{CliError, CliResult};
use crate::manifest::MANIFEST_FILE;

/// Column order of `summary.csv`.
pub const SUMMARY_HEADER: &str = "config,f1,accuracy,best_val_loss,minutes,status";

/// Variants run when no grid file is given.
pub const DEFAULT_GRID: &str = "\
channel-mult-0.5 channel-mult=0.5
channel-mult-2.0 channel-mult=2.0
frames-5 frames=5
frames-20 frames=20
";

#[derive(Debug, Clone, Args, Serialize)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Grid file: one `name key=value ...` line per variant, keys named like
    /// the `train` flags. Defaults to half/double channels and frames.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long, default_value = "runs/ablate")]
    pub out: PathBuf,
    /// Baseline settings every variant starts from.
    #[command(flatten)]
    pub options: TrainOptions,
}

#[derive(Debug, Parser)]
#[command(
    name = "grid",
    no_binary_name = true,
    disable_help_flag = true,
    args_override_self = true
)]
struct GridRow {
    #[command(flatten)]
    options: TrainOptions,
}

#[derive(Debug, Clone, Serialize)]
pub struct Variant {
    pub name: String,
    pub options: TrainOptions,
}

/// `base` spelled as `train` flags.
fn base_flags(base: &TrainOptions) -> Vec<String> {
    let Value::Object(fields) = serde_json::to_value(base).expect("options serialize") else {
        unreachable!("options serialize to an object")
    };
    fields
        .into_iter()
        .filter_map(|(key, value)| {
            let value = match value {
                Value::Null => return None,
                Value::String(s) => s,
                other => other.to_string(),
            };
            Some(format!("--{}={value}", key.replace('_', "-")))
        })
        .collect()
}

/// Parses grid lines on top of `base`. `#` starts a comment.
pub fn parse_grid(text: &str, base: &TrainOptions) -> CliResult<Vec<Variant>> {
    let mut variants = vec![Variant {
        name: "baseline".into(),
        options: base.clone(),
    }];
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        let mut words = line.split_whitespace();
        let Some(name) = words.next() else { continue };
        if name.contains(['=', ',', '/']) || variants.iter().any(|v| v.name == name) {
            return Err(CliError::Usage(format!("grid line {}: bad or duplicate name {name:?}", n + 1)));
        }
        let mut flags = base_flags(base);
        for word in words {
            let Some((key, value)) = word.split_once('=') else {
                return Err(CliError::Usage(format!("grid line {}: expected key=value, got {word:?}", n + 1)));
            };
            flags.push(format!("--{key}={value}"));
        }
        let row = GridRow::try_parse_from(flags)
            .map_err(|e| CliError::Usage(format!("grid line {}: {}", n + 1, e.kind())))?;
        row.options.validate()?;
        variants.push(Variant {
            name: name.to_string(),
            options: row.options,
        });
    }
    Ok(variants)
}

fn read_grid(args: &AblateArgs) -> CliResult<Vec<Variant>> {
    let text = match &args.grid {
        Some(path) => fs::read_to_string(path).map_err(|e| CliError::io(path, e))?,
        None => DEFAULT_GRID.to_string(),
    };
    parse_grid(&text, &args.options)
}

fn summary_path(out: &Path) -> PathBuf {
    out.join("summary.csv")
}

pub fn ablate(args: AblateArgs, manifest: Option<PathBuf>) -> CliResult<()> {
    args.options.validate()?;
    let variants = read_grid(&args)?;
    ensure_outside(&args.data, &args.out)?;
    fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;
    let mut outputs = vec![summary_path(&args.out)];
    outputs.extend(variants.iter().map(|v| args.out.join(&v.name)));
    let location = manifest.unwrap_or_else(|| args.out.join(MANIFEST_FILE));
    let config = json!({ "args": args, "variants": variants });
    run_recorded(location, "ablate", Some(args.options.seed), &config, &outputs, || {
        let mut csv = format!("{SUMMARY_HEADER}\n");
        let mut rows = Vec::new();
        let mut failed = 0;
        for v in &variants {
            log::info!("ablation variant {}", v.name);
            let dir = args.out.join(&v.name);
            let result = fs::create_dir_all(&dir)
                .map_err(|e| CliError::io(&dir, e))
                .and_then(|()| train_into(&args.data, &dir, &v.options, false));
            match result {
                Ok(r) => {
                    writeln!(
                        csv,
                        "{},{},{},{},{:.3},ok",
                        v.name, r.test.weighted_f1, r.test.accuracy, r.best_val_loss, r.minutes
                    )
                    .ok();
                    println!(
                        "{:<18} f1 {:.4} acc {:.4} best_val_loss {:.4} {:.2} min",
                        v.name, r.test.weighted_f1, r.test.accuracy, r.best_val_loss, r.minutes
                    );
                    rows.push(json!({
                        "config": v.name, "f1": r.test.weighted_f1, "accuracy": r.test.accuracy,
                        "best_val_loss": r.best_val_loss, "minutes": r.minutes, "status": "ok",
                    }));
                }
                Err(e) => {
                    failed += 1;
                    log::error!("variant {} failed: {e}", v.name);
                    writeln!(csv, "{},,,,,failed", v.name).ok();
                    rows.push(json!({ "config": v.name, "status": "failed", "error": e.to_string() }));
                }
            }
        }
        let path = summary_path(&args.out);
        fs::write(&path, csv).map_err(|e| CliError::io(&path, e))?;
        if failed > 0 {
            return Err(CliError::Failed(format!("{failed} of {} variants failed", variants.len())));
        }
        Ok(json!({ "rows": rows }))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> TrainOptions {
        GridRow::try_parse_from(["--epochs=3", "--res=32x32", "--lr=0.0005", "--augment-classes=none"])
            .unwrap()
            .options
    }

    #[test]
    fn overrides_keep_the_baseline() {
        let b = base();
        let v = parse_grid("narrow channel-mult=0.5 # half width\n\nlong frames=20\n", &b).unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(v[0].name, "baseline");
        assert_eq!(v[1].options.channel_mult, 0.5);
        assert_eq!(v[2].options.frames, 20);
        for variant in &v[1..] {
            assert_eq!(variant.options.epochs, 3);
            assert_eq!(variant.options.res.to_string(), "32x32");
            assert_eq!(variant.options.lr, 0.0005);
            assert_eq!(variant.options.augment_classes.as_deref(), Some("none"));
        }
    }

    #[test]
    fn baseline_flags_round_trip() {
        let b = base();
        let again = GridRow::try_parse_from(base_flags(&b)).unwrap().options;
        assert_eq!(serde_json::to_value(&again).unwrap(), serde_json::to_value(&b).unwrap());
    }

    #[test]
    fn malformed_rows_are_usage_errors() {
        for text in ["x frames", "x frames=two", "x nope=1", "a frames=5\na frames=6", "base=1"] {
            let err = parse_grid(text, &base()).unwrap_err();
            assert!(matches!(err, CliError::Usage(_)), "{text:?}: {err}");
        }
    }
}
