//! Provenance record written after every successful stage.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::commands::Outcome;
use crate::config::{RunConfig, CONFIG_SCHEMA_VERSION};
use crate::CliError;

#[derive(Debug, Serialize)]
pub struct RunRecord {
    pub stage: String,
    pub version: String,
    pub config_schema: u32,
    pub argv: Vec<String>,
    /// Configuration after flags were applied.
    pub config: RunConfig,
    /// SHA-256 of the compact JSON of `config`.
    pub config_sha256: String,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub wall_seconds: f64,
}

pub fn config_hash(cfg: &RunConfig) -> String {
    let bytes = serde_json::to_vec(cfg).expect("config serializes");
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl RunRecord {
    pub fn new(stage: &str, argv: &[String], cfg: &RunConfig, outcome: Outcome, wall_seconds: f64) -> Self {
        Self {
            stage: stage.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_schema: CONFIG_SCHEMA_VERSION,
            argv: argv.to_vec(),
            config: cfg.clone(),
            config_sha256: config_hash(cfg),
            seed: cfg.seed,
            inputs: outcome.inputs,
            outputs: outcome.outputs,
            wall_seconds,
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let json = serde_json::to_string_pretty(self).map_err(|e| CliError::Internal(e.to_string()))?;
        log::debug!("run record: {json}");
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::Validation(format!("cannot create {}: {e}", parent.display())))?;
        }
        std::fs::write(path, json).map_err(|e| CliError::Validation(format!("cannot write {}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_tracks_config_changes() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 64);
        b.train.epochs += 1;
        assert_ne!(config_hash(&a), config_hash(&b));
    }
}
