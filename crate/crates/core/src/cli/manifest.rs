use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use super::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub seeds: IndexMap<String, u64>,
    pub elapsed_ms: u128,
    /// Output path relative to the run directory → SHA-256 of its bytes.
    pub artifacts: IndexMap<String, String>,
}

/// Everything needed to repeat a run: the effective config (including the
/// seed actually used), the tool version, and what each stage produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: RunConfig,
    pub stages: IndexMap<String, StageRecord>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

impl RunManifest {
    /// The existing manifest in `dir`, refreshed with `config`, or a new one.
    pub fn open(dir: &Path, config: &RunConfig) -> RunManifest {
        let stages = fs::read(dir.join(MANIFEST_FILE))
            .ok()
            .and_then(|b| serde_json::from_slice::<RunManifest>(&b).ok())
            .map(|m| m.stages)
            .unwrap_or_default();
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            stages,
        }
    }

    /// Writes through a temporary file and a rename so readers never see a
    /// partial manifest.
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let tmp = dir.join(format!(".{MANIFEST_FILE}.tmp"));
        fs::write(&tmp, serde_json::to_vec_pretty(self)?)?;
        fs::rename(&tmp, dir.join(MANIFEST_FILE))?;
        Ok(())
    }
}
