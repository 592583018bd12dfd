//! Optional TOML run configuration. Keys mirror the long flag names with
//! underscores; a flag given on the command line always wins.

use std::path::{Path, PathBuf};

use serde::Deserialize;

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub scans: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub near: Option<f64>,
    pub far: Option<f64>,
    pub delta: Option<f64>,
    pub grid_step: Option<f64>,
    pub zbuffer_scale: Option<u32>,
    pub clip_ratio: Option<f64>,
    pub policy: Option<String>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub variant: Option<String>,
    pub precision: Option<usize>,
    pub convention: Option<String>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub token_env: Option<String>,
    pub max_in_flight: Option<usize>,
    pub timeout: Option<f64>,
    pub retries: Option<u32>,
    pub log_level: Option<String>,
}

pub fn load(path: &Path) -> Result<FileConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}
