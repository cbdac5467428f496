use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Provenance record written next to every artifact-producing command's output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name, exactly as given.
    pub argv: Vec<String>,
    pub cwd: PathBuf,
    /// `DOSEKIT_SEED` at run time, restored on replay.
    pub env_seed: Option<String>,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub tool_version: String,
    pub platform: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    /// Wall-clock measurements and other non-reproducible extras.
    #[serde(default)]
    pub timing: serde_json::Value,
}

pub fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

pub fn platform() -> String {
    format!("{}-{}", std::env::consts::ARCH, std::env::consts::OS)
}

impl RunManifest {
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}

/// `out.json` -> `out.run.json`; `out.mvol` -> `out.run.json`.
pub fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("run.json")
}
