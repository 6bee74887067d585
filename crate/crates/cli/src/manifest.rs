//! Run manifests: inputs, outputs, seed, and config hash for every command,
//! with content checksums so a run can be audited and reproduced.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

pub fn sha256_bytes(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(sha256_bytes(&bytes))
}

/// One command invocation: what it read, what it wrote, and under which
/// seed and configuration.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub command: String,
    pub profile: String,
    pub seed: u64,
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: impl Into<String>, profile: &str, seed: u64, config_hash: &str) -> Manifest {
        Manifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            command: command.into(),
            profile: profile.to_string(),
            seed,
            config_hash: config_hash.to_string(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn record_input(&mut self, path: &Path) -> Result<()> {
        let checksum = sha256_file(path)?;
        self.inputs.insert(path.display().to_string(), checksum);
        Ok(())
    }

    pub fn record_output(&mut self, path: &Path) -> Result<()> {
        let checksum = sha256_file(path)?;
        self.outputs.insert(path.display().to_string(), checksum);
        Ok(())
    }

    /// Write to `<out_dir>/manifests/<command>.json`.
    pub fn write(&self, out_dir: &Path) -> Result<PathBuf> {
        let dir = out_dir.join("manifests");
        fs::create_dir_all(&dir)
            .with_context(|| format!("creating manifest directory {}", dir.display()))?;
        let path = dir.join(format!("{}.json", self.command));
        let json = serde_json::to_string_pretty(self).context("serializing manifest")?;
        fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
