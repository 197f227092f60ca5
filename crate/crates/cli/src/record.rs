//! Reproducibility records written next to every run's outputs.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

/// Git-style object id: SHA-256 over `"blob <len>\0"` followed by the bytes.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    format!("sha256:{}", hex::encode(h.finalize()))
}

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(content_hash(&bytes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointUse {
    pub path: PathBuf,
    pub hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub args: Vec<String>,
    pub seed: u64,
    pub config: RunConfig,
    pub checkpoints: Vec<CheckpointUse>,
    pub version: String,
}

impl RunRecord {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        RunRecord {
            command: command.into(),
            args: std::env::args().collect(),
            seed: config.seed,
            config: config.clone(),
            checkpoints: Vec::new(),
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }

    pub fn uses(&mut self, path: &Path) -> Result<String> {
        let hash = file_hash(path)?;
        self.checkpoints.push(CheckpointUse {
            path: path.to_path_buf(),
            hash: hash.clone(),
        });
        Ok(hash)
    }

    /// Write `run-record.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("run-record.json");
        std::fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }
}
