//! Result directories, the run manifest and atomic file writes.

use std::fs;
use std::io::Write;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_ECHO_FILE: &str = "config.json";
pub const TIMING_FILE: &str = "timing.log";

/// Identity of one command invocation. Holds nothing time-dependent, so
/// reruns write it byte-identically; wall-clock timing goes to a separate
/// log next to it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 of the canonical config echo, hex.
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    /// Directory name relative to `--out`.
    pub output_dir: String,
}

pub fn artifact_version() -> String {
    format!("fedsim-{}", env!("CARGO_PKG_VERSION"))
}

pub fn config_hash(cfg: &RunConfig) -> String {
    let digest = Sha256::digest(cfg.to_json_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = path
        .parent()
        .ok_or_else(|| CliError::Io(format!("{} has no parent directory", path.display())))?;
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| CliError::Io(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(|e| CliError::Io(format!("writing {}: {e}", path.display())))
}

pub fn json_bytes<T: Serialize + ?Sized>(value: &T) -> CliResult<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Serializes `rows` with a header row.
pub fn csv_bytes<T: Serialize>(rows: &[T]) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner()
        .map_err(|e| CliError::Io(format!("csv flush: {e}")))
}

/// `<out>/<command>-<first 12 hex of the config hash>`.
#[derive(Debug, Clone)]
pub struct OutputDir {
    root: PathBuf,
    manifest: RunManifest,
}

impl OutputDir {
    /// Creates the directory and writes the manifest and config echo before
    /// anything else.
    pub fn create(out: &Path, command: &str, cfg: &RunConfig) -> CliResult<Self> {
        let hash = config_hash(cfg);
        let name = format!("{command}-{}", &hash[..12]);
        let manifest = RunManifest {
            command: command.to_string(),
            config_hash: hash,
            seed: cfg.seed,
            version: artifact_version(),
            output_dir: name.clone(),
        };
        let dir = Self {
            root: out.join(&name),
            manifest,
        };
        fs::create_dir_all(&dir.root)?;
        dir.write(MANIFEST_FILE, &json_bytes(&dir.manifest)?)?;
        dir.write(CONFIG_ECHO_FILE, cfg.to_json_string().as_bytes())?;
        Ok(dir)
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    /// Atomically writes `rel` under the directory; `rel` may not escape it.
    pub fn write(&self, rel: &str, bytes: &[u8]) -> CliResult<()> {
        let rel_path = Path::new(rel);
        if rel_path
            .components()
            .any(|c| !matches!(c, Component::Normal(_)))
        {
            return Err(CliError::Io(format!(
                "{rel}: output paths must stay inside the run directory"
            )));
        }
        atomic_write(&self.root.join(rel_path), bytes)
    }

    pub fn write_json<T: Serialize + ?Sized>(&self, rel: &str, value: &T) -> CliResult<()> {
        self.write(rel, &json_bytes(value)?)
    }

    pub fn write_csv<T: Serialize>(&self, rel: &str, rows: &[T]) -> CliResult<()> {
        self.write(rel, &csv_bytes(rows)?)
    }

    pub fn write_timing(&self, seconds: f64) -> CliResult<()> {
        self.write(TIMING_FILE, format!("elapsed_s {seconds:.3}\n").as_bytes())
    }
}
