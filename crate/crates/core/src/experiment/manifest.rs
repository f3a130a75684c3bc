use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_text, write_atomic};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub completed_unix: u64,
    /// Paths relative to the run directory.
    pub artifacts: Vec<String>,
    pub metrics: BTreeMap<String, f64>,
}

/// Per-run bookkeeping, rewritten atomically after every stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub code_version: String,
    pub created_unix: u64,
    #[serde(default)]
    pub stages: BTreeMap<String, StageRecord>,
}

pub(crate) fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn new(config_hash: &str) -> Self {
        Self {
            config_hash: config_hash.to_string(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            created_unix: now_unix(),
            stages: BTreeMap::new(),
        }
    }

    /// Loads `path`, or starts a fresh manifest when it does not exist.
    /// A manifest written for another config is an error.
    pub fn open(path: &Path, config_hash: &str) -> Result<Self> {
        if !path.exists() {
            return Ok(Self::new(config_hash));
        }
        let m: Self =
            toml::from_str(&read_text(path)?).map_err(|e| Error::format(path, e.to_string()))?;
        if m.config_hash != config_hash {
            return Err(Error::Config(format!(
                "{} belongs to config {}, not {config_hash}",
                path.display(),
                m.config_hash
            )));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).expect("manifest is always serializable");
        write_atomic(path, text.as_bytes())
    }

    pub fn is_done(&self, stage: &str) -> bool {
        self.stages.contains_key(stage)
    }

    pub fn record(&mut self, stage: &str, artifacts: Vec<String>, metrics: BTreeMap<String, f64>) {
        self.stages.insert(
            stage.to_string(),
            StageRecord {
                completed_unix: now_unix(),
                artifacts,
                metrics,
            },
        );
    }

    pub fn metric(&self, stage: &str, key: &str) -> Option<f64> {
        self.stages.get(stage)?.metrics.get(key).copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_hash_guard() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("manifest.toml");
        let mut m = RunManifest::open(&p, "abc").unwrap();
        m.record(
            "simulate",
            vec!["trajectories/train/00.csv".into()],
            BTreeMap::from([("count".into(), 15.0)]),
        );
        m.save(&p).unwrap();
        let back = RunManifest::open(&p, "abc").unwrap();
        assert_eq!(back, m);
        assert_eq!(back.metric("simulate", "count"), Some(15.0));
        assert!(RunManifest::open(&p, "other").is_err());
    }
}
