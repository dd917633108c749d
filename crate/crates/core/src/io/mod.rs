//! Configuration, file formats and run provenance.

pub mod checkpoint;
pub mod config;
pub mod csv;
pub mod heatmap;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{read_checkpoint, read_checkpoint_for, write_checkpoint, Checkpoint};
pub use config::{parse_config, read_config, RunConfig};
pub use heatmap::{render_heatmap, Heatmap};

/// Provenance written next to every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub command: String,
    pub code_version: String,
    pub wall_time_seconds: f64,
    /// Per-module diagnostics such as clamp counts, dead trajectories and fit warnings.
    pub diagnostics: BTreeMap<String, String>,
    /// Absent for commands that only post-process other artifacts.
    pub config: Option<RunConfig>,
}

impl RunMetadata {
    pub fn new(command: &str, config: Option<&RunConfig>) -> Self {
        RunMetadata {
            command: command.to_string(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_seconds: 0.0,
            diagnostics: BTreeMap::new(),
            config: config.cloned(),
        }
    }

    pub fn note(&mut self, key: &str, value: impl ToString) {
        self.diagnostics.insert(key.to_string(), value.to_string());
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Writes `<artifact>.meta.toml`.
    pub fn write_beside(&self, artifact: &Path) -> Result<PathBuf> {
        let path = metadata_path(artifact);
        std::fs::write(&path, self.to_toml()?)?;
        Ok(path)
    }
}

pub fn metadata_path(artifact: &Path) -> PathBuf {
    let mut s = artifact.as_os_str().to_owned();
    s.push(".meta.toml");
    PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metadata_carries_seed_and_defaults() {
        let cfg = parse_config("[lattice]\nlx = 4\n[model]\nj = 3\nlambda = 1\nkappa1 = 1.5\nkappa2 = 0.2\nkx = 0.8\nky = 4\nkz = 4\n[engine]\nseed = 5\n").unwrap();
        let mut meta = RunMetadata::new("twa", Some(&cfg));
        meta.note("clamp_events", 0);
        let text = meta.to_toml().unwrap();
        assert!(text.contains("seed = 5"));
        assert!(text.contains("trajectories = 512"));
        assert!(text.contains("clamp_events"));
        let back: RunMetadata = toml::from_str(&text).unwrap();
        assert_eq!(back, meta);
    }
}
