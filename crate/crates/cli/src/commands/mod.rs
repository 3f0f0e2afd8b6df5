mod ablate;
mod datagen;
mod encode;
mod train;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Serialize, Serializer};
use serde_json::Value;

use crate::error::{CliError, CliResult};
use crate::manifest::{RunManifest, MANIFEST_FILE};

pub use ablate::{ablate, AblateArgs};
pub use datagen::{datagen, DatagenArgs};
pub use encode::{encode, EncodeArgs};
pub use train::{eval, infer, train, EvalArgs, InferArgs, TrainArgs};

/// `HxW`, or a single number for a square frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Resolution(pub usize, pub usize);

impl FromStr for Resolution {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| format!("bad resolution {s:?}, expected HxW"))
        };
        match s.split_once(['x', 'X']) {
            Some((h, w)) => Ok(Resolution(parse(h)?, parse(w)?)),
            None => parse(s).map(|n| Resolution(n, n)),
        }
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.0, self.1)
    }
}

impl Serialize for Resolution {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl From<Resolution> for (usize, usize) {
    fn from(r: Resolution) -> Self {
        (r.0, r.1)
    }
}

/// Manifest path for outputs that are themselves data trees: a sibling file,
/// so the tree holds only data.
fn sibling_manifest(out: &Path) -> PathBuf {
    match (out.parent(), out.file_name()) {
        (Some(parent), Some(name)) => parent.join(format!("{}.{MANIFEST_FILE}", name.to_string_lossy())),
        _ => out.join(MANIFEST_FILE),
    }
}

/// Writes the manifest, runs `work`, then finalizes the manifest whatever
/// the outcome.
fn run_recorded(
    location: PathBuf,
    subcommand: &str,
    seed: Option<u64>,
    config: &impl Serialize,
    outputs: &[PathBuf],
    work: impl FnOnce() -> CliResult<Value>,
) -> CliResult<()> {
    let config = serde_json::to_value(config).map_err(|e| CliError::Failed(e.to_string()))?;
    let manifest = RunManifest::begin(&location, subcommand, seed, config, outputs)?;
    let outcome = work();
    let finished = manifest.finish(&outcome);
    outcome?;
    finished?;
    log::info!("manifest written to {}", location.display());
    Ok(())
}

/// Refuses output locations inside an input dataset.
fn ensure_outside(input: &Path, out: &Path) -> CliResult<()> {
    let abs = |p: &Path| std::path::absolute(p).map_err(|e| CliError::io(p, e));
    let (input, out) = (abs(input)?, abs(out)?);
    if out.starts_with(&input) {
        return Err(CliError::Usage(format!(
            "output {} lies inside the input {}",
            out.display(),
            input.display()
        )));
    }
    Ok(())
}
