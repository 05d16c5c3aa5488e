//! Run manifests: the resolved config, seeds and outputs of one command.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;
/// Version of the metrics and sweep CSV layouts.
pub const CSV_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub manifest_version: u32,
    pub csv_schema_version: u32,
    pub toolkit_version: String,
    pub command: String,
    pub config: RunConfig,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    /// Seconds since the Unix epoch.
    pub started_at: u64,
    pub finished_at: Option<u64>,
    /// Output files, relative to the manifest's directory.
    pub outputs: Vec<String>,
    /// Command-specific results.
    #[serde(default)]
    pub results: serde_json::Value,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig, seeds: Vec<u64>) -> Self {
        RunManifest {
            manifest_version: MANIFEST_VERSION,
            csv_schema_version: CSV_SCHEMA_VERSION,
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config: config.clone(),
            config_hash: config.content_hash(),
            seeds,
            started_at: unix_now(),
            finished_at: None,
            outputs: Vec::new(),
            results: serde_json::Value::Null,
        }
    }

    pub fn finish(&mut self) {
        self.finished_at = Some(unix_now());
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: RunManifest = serde_json::from_slice(&std::fs::read(path)?)?;
        if m.manifest_version != MANIFEST_VERSION {
            return Err(Error::Config(format!(
                "unsupported manifest version {}",
                m.manifest_version
            )));
        }
        Ok(m)
    }
}

/// Reads either a plain config document or the config embedded in a manifest.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("invalid JSON in {}: {e}", path.display())))?;
    match value.get("manifest_version") {
        Some(_) => {
            let m: RunManifest = serde_json::from_value(value)
                .map_err(|e| Error::Config(format!("invalid manifest {}: {e}", path.display())))?;
            m.config.validate()?;
            Ok(m.config)
        }
        None => RunConfig::from_json(&text),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trip_and_config_reload() {
        let mut cfg = RunConfig::default();
        cfg.train.iterations = 3;
        let mut m = RunManifest::new("train", &cfg, vec![1, 2]);
        m.outputs.push("metrics_seed1.csv".into());
        m.finish();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        m.save(&path).unwrap();
        assert_eq!(RunManifest::load(&path).unwrap(), m);
        assert_eq!(load_config(&path).unwrap(), cfg);
        let plain = dir.path().join("cfg.json");
        std::fs::write(&plain, cfg.to_json()).unwrap();
        assert_eq!(load_config(&plain).unwrap(), cfg);
        assert!(matches!(load_config(&dir.path().join("missing.json")), Err(Error::Config(_))));
    }
}
