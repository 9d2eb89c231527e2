//! Shared plumbing for all subcommands: failure classification for exit
//! codes, manifest persistence and style labels.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use stylesim::style::StyleTriplet;

/// Command failure carrying its exit code class: domain problems exit 1,
/// I/O problems exit 2. The distinction is a stable contract for CI.
#[derive(Debug)]
pub enum Failure {
    Domain(String),
    Io(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Domain(_) => 1,
            Failure::Io(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Domain(m) | Failure::Io(m) => m,
        }
    }

    pub fn io(context: &str, err: impl std::fmt::Display) -> Failure {
        Failure::Io(format!("{context}: {err}"))
    }
}

/// Everything a finished run leaves behind, written next to its artifacts.
/// Paths are relative to the manifest's own directory so a run directory
/// can be moved wholesale.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub created_utc: String,
    pub scenario_name: String,
    pub run_seed: u64,
    pub schema_version: u32,
    pub config_digest: String,
    pub log_digest: String,
    pub paths: ManifestPaths,
    /// Translation events by source (`catalog`, `provider`,
    /// `provider_fallback`).
    pub translation_sources: BTreeMap<String, u64>,
    pub events_total: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestPaths {
    pub config: String,
    pub log: String,
    pub metrics: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcripts: Option<String>,
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<(), Failure> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Failure::Domain(format!("manifest serialisation: {e}")))?;
        std::fs::write(path, text).map_err(|e| Failure::io("writing manifest", e))
    }

    pub fn load(path: &Path) -> Result<(RunManifest, PathBuf), Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::io(&format!("reading manifest {}", path.display()), e))?;
        let manifest: RunManifest = serde_json::from_str(&text)
            .map_err(|e| Failure::Domain(format!("manifest parse error: {e}")))?;
        let dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok((manifest, dir))
    }

    pub fn log_path(&self, dir: &Path) -> PathBuf {
        dir.join(&self.paths.log)
    }
}

/// Human label for a style triplet: the non-normal trait names joined with
/// `+`, or `normal` when unstyled.
pub fn style_label(style: &StyleTriplet) -> String {
    let named: Vec<&str> = [&style.l1, &style.l2, &style.l3]
        .into_iter()
        .filter(|n| n.as_str() != "normal")
        .map(|n| n.as_str())
        .collect();
    if named.is_empty() {
        "normal".to_string()
    } else {
        named.join("+")
    }
}
