//! Provenance record written beside every artifact.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use eres2net::{Error, Result};
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: &'static str,
    pub version: &'static str,
    pub config: Option<String>,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub args: Vec<String>,
    pub timestamp_unix: u64,
}

impl RunManifest {
    pub fn new(command: &'static str) -> Self {
        Self {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config: None,
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            args: std::env::args().collect(),
            timestamp_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    pub fn config(mut self, config: &str) -> Self {
        self.config = Some(config.to_string());
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn input(mut self, path: &Path) -> Self {
        self.inputs.push(path.to_path_buf());
        self
    }

    /// Writes `<artifact>.run.json`, or `<dir>/run.json` for a directory.
    pub fn write_beside(&self, artifact: &Path) -> Result<PathBuf> {
        let path = if artifact.is_dir() {
            artifact.join("run.json")
        } else {
            let mut name = artifact.file_name().unwrap_or_default().to_os_string();
            name.push(".run.json");
            artifact.with_file_name(name)
        };
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Records `outputs` and writes one manifest beside each of them.
    pub fn finish(mut self, outputs: &[PathBuf]) -> Result<()> {
        self.outputs = outputs.to_vec();
        for out in outputs {
            self.write_beside(out)?;
        }
        Ok(())
    }
}
