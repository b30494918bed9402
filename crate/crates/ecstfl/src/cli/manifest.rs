//! Run directories and manifests.
//!
//! Every command writes its artifacts into a fresh `runs/<timestamp>-<command>/`
//! directory plus exactly one `manifest.json` recording the resolved
//! configuration, the seed, and SHA-256 digests of all inputs and outputs.
//! Re-running a command with the same inputs and seed reproduces every
//! output digest; only the timestamp and duration differ.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub duration_secs: f64,
    pub created_utc: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// SHA-256 of a file's contents, hex-encoded.
pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Create `out/<timestamp>-<command>/`, suffixing a counter on collision.
pub fn create_run_dir(out_root: &Path, command: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(out_root)?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%3fZ");
    let base = format!("{stamp}-{command}");
    let mut candidate = out_root.join(&base);
    let mut counter = 1;
    while candidate.exists() {
        counter += 1;
        candidate = out_root.join(format!("{base}-{counter}"));
    }
    std::fs::create_dir(&candidate)?;
    Ok(candidate)
}

/// Accumulates manifest contents while a command runs.
pub struct ManifestBuilder {
    command: String,
    seed: u64,
    config: serde_json::Value,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
    notes: Vec<String>,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, seed: u64, config: serde_json::Value) -> Self {
        Self {
            command: command.to_string(),
            seed,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            notes: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn note(&mut self, note: String) {
        self.notes.push(note);
    }

    /// Write `manifest.json` into the run directory.
    pub fn write(self, run_dir: &Path) -> Result<PathBuf> {
        let manifest = RunManifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.seed,
            config: self.config,
            inputs: self.inputs,
            outputs: self.outputs,
            duration_secs: self.started.elapsed().as_secs_f64(),
            created_utc: chrono::Utc::now().to_rfc3339(),
            notes: self.notes,
        };
        let path = run_dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(path)
    }
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}
