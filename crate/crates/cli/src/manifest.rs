//! JSON record of one command invocation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    /// Full argument vector, enough to re-run together with `config`.
    pub argv: Vec<String>,
    pub version: &'static str,
    pub seed: u64,
    /// The effective scene, after command-line overrides, as TOML.
    pub config: String,
    pub started_unix_s: f64,
    pub finished_unix_s: f64,
    /// Paths relative to the output directory, plus any requested dump
    /// path as given.
    pub outputs: Vec<String>,
    /// Terminal status per run, scheme or point.
    pub statuses: BTreeMap<String, String>,
    /// Command-specific summary values.
    pub summary: serde_json::Value,
    pub exit_code: i32,
}

pub fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: String) -> Self {
        Self {
            command: command.to_string(),
            argv: std::env::args().collect(),
            version: env!("CARGO_PKG_VERSION"),
            seed,
            config,
            started_unix_s: unix_now(),
            finished_unix_s: 0.0,
            outputs: Vec::new(),
            statuses: BTreeMap::new(),
            summary: serde_json::Value::Null,
            exit_code: 0,
        }
    }

    pub fn output(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        PathBuf::from(name)
    }

    pub fn write(mut self, dir: &Path, exit_code: i32) -> std::io::Result<()> {
        self.finished_unix_s = unix_now();
        self.exit_code = exit_code;
        let text = serde_json::to_string_pretty(&self).map_err(std::io::Error::other)?;
        std::fs::write(dir.join(MANIFEST_FILE), text + "\n")
    }
}
