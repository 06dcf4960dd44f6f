use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::error::{io_at, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record written once into every output directory; the argument vector and
/// configuration snapshot are enough to repeat the job.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub argv: Vec<String>,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub started_unix: f64,
    pub finished_unix: f64,
    /// Paths relative to the directory holding the manifest.
    pub artifacts: Vec<String>,
}

pub fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

impl RunManifest {
    pub fn new(command: &'static str, seed: Option<u64>, config: serde_json::Value, started_unix: f64) -> Self {
        Self {
            tool: "neref",
            version: env!("CARGO_PKG_VERSION"),
            command,
            argv: std::env::args().collect(),
            seed,
            config,
            started_unix,
            finished_unix: started_unix,
            artifacts: Vec::new(),
        }
    }

    pub fn write(mut self, dir: &Path, mut artifacts: Vec<String>) -> CliResult<()> {
        artifacts.sort();
        self.artifacts = artifacts;
        self.finished_unix = unix_now();
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self).expect("manifest serializes");
        io_at(&path, std::fs::write(&path, text + "\n"))
    }
}

/// Serializes any config into the manifest's JSON snapshot.
pub fn snapshot<T: Serialize>(value: &T) -> serde_json::Value {
    serde_json::to_value(value).expect("configuration serializes")
}
