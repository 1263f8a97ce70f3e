//! Run manifest: what was run, from which configuration, and what came out.

use serde::Serialize;
use std::path::Path;

#[derive(Debug, Clone, Serialize)]
pub struct ManifestAssertion {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
    pub theorem_backed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub config_path: String,
    /// SHA-256 of the canonical config serialization; stable across
    /// platforms.
    pub config_hash: String,
    pub output_dir: String,
    pub tool_version: String,
    pub wall_time_s: f64,
    /// Files written by the run, relative to `output_dir`. All of them
    /// exist by the time the manifest itself is written.
    pub artifacts: Vec<String>,
    pub notes: Vec<String>,
    pub assertions: Vec<ManifestAssertion>,
}

impl RunManifest {
    pub fn render(&self) -> String {
        toml::to_string(self).expect("manifest serialization")
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<std::path::PathBuf> {
        let path = dir.join("manifest.toml");
        std::fs::write(&path, self.render())?;
        Ok(path)
    }
}
