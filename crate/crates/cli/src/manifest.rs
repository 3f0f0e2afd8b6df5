//! Machine-readable record of one CLI invocation.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "run_manifest.json";

/// `git describe`-style version baked in at build time.
pub const VERSION: &str = env!("EVHAR_BUILD_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Running,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct Artifact {
    pub path: PathBuf,
    /// SHA-256 of the file, or of every file below a directory in path order.
    pub sha256: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: String,
    pub seed: Option<u64>,
    pub config: Value,
    pub threads: usize,
    pub started: String,
    pub finished: Option<String>,
    pub status: Status,
    pub exit_code: Option<i32>,
    pub error: Option<String>,
    pub outputs: Vec<Artifact>,
    pub results: Value,
    #[serde(skip)]
    location: PathBuf,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl RunManifest {
    /// Writes the manifest in the `running` state.
    pub fn begin(
        location: &Path,
        subcommand: &str,
        seed: Option<u64>,
        config: Value,
        outputs: &[PathBuf],
    ) -> CliResult<Self> {
        let manifest = RunManifest {
            subcommand: subcommand.to_string(),
            version: VERSION.to_string(),
            seed,
            config,
            threads: rayon::current_num_threads(),
            started: now(),
            finished: None,
            status: Status::Running,
            exit_code: None,
            error: None,
            outputs: outputs
                .iter()
                .map(|p| Artifact {
                    path: p.clone(),
                    sha256: None,
                })
                .collect(),
            results: Value::Null,
            location: location.to_path_buf(),
        };
        manifest.write()?;
        Ok(manifest)
    }

    /// Records the outcome and output checksums, then rewrites the file.
    pub fn finish(mut self, outcome: &CliResult<Value>) -> CliResult<()> {
        self.finished = Some(now());
        match outcome {
            Ok(results) => {
                self.status = Status::Succeeded;
                self.exit_code = Some(0);
                self.results = results.clone();
            }
            Err(e) => {
                self.status = Status::Failed;
                self.exit_code = Some(e.exit_code());
                self.error = Some(e.to_string());
            }
        }
        let skip = self.location.clone();
        for out in &mut self.outputs {
            out.sha256 = digest_path(&out.path, &skip)?;
        }
        self.write()
    }

    fn write(&self) -> CliResult<()> {
        if let Some(parent) = self.location.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        let mut text = serde_json::to_string_pretty(self).map_err(|e| CliError::Failed(e.to_string()))?;
        text.push('\n');
        fs::write(&self.location, text).map_err(|e| CliError::io(&self.location, e))
    }
}

fn collect_files(dir: &Path, skip: &Path, out: &mut Vec<PathBuf>) -> CliResult<()> {
    for entry in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(&path, skip, out)?;
        } else if path != skip {
            out.push(path);
        }
    }
    Ok(())
}

/// Checksum of a file or a directory tree; `None` when nothing exists.
/// Directory digests cover relative paths and contents, skipping `skip`.
pub fn digest_path(path: &Path, skip: &Path) -> CliResult<Option<String>> {
    if path.is_file() {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        return Ok(Some(hex::encode(Sha256::digest(&bytes))));
    }
    if !path.is_dir() {
        return Ok(None);
    }
    let mut files = Vec::new();
    collect_files(path, skip, &mut files)?;
    files.sort();
    let mut hasher = Sha256::new();
    let mut buf = Vec::new();
    for file in files {
        let rel = file.strip_prefix(path).unwrap_or(&file);
        hasher.update(rel.to_string_lossy().as_bytes());
        hasher.update([0]);
        buf.clear();
        fs::File::open(&file)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| CliError::io(&file, e))?;
        hasher.update((buf.len() as u64).to_le_bytes());
        hasher.update(&buf);
    }
    Ok(Some(hex::encode(hasher.finalize())))
}
