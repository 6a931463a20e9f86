use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::CliError;

pub const FILE_NAME: &str = "manifest.json";

/// Provenance record written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config_paths: Vec<PathBuf>,
    pub seeds: serde_json::Value,
    pub outputs: Vec<PathBuf>,
    pub tool_version: String,
    pub wall_clock_seconds: f64,
    /// Later commands that wrote into the same directory, such as a render.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub followups: Vec<RunManifest>,
}

pub struct Recorder {
    command: &'static str,
    started: Instant,
    config_paths: Vec<PathBuf>,
    seeds: serde_json::Value,
    outputs: Vec<PathBuf>,
}

impl Recorder {
    pub fn start(command: &'static str) -> Self {
        Self {
            command,
            started: Instant::now(),
            config_paths: Vec::new(),
            seeds: serde_json::Value::Null,
            outputs: Vec::new(),
        }
    }

    pub fn config(&mut self, path: &Path) {
        self.config_paths.push(path.to_path_buf());
    }

    pub fn seeds(&mut self, seeds: serde_json::Value) {
        self.seeds = seeds;
    }

    pub fn output(&mut self, path: impl Into<PathBuf>) {
        self.outputs.push(path.into());
    }

    fn finish(self) -> RunManifest {
        RunManifest {
            command: self.command.into(),
            argv: std::env::args().collect(),
            config_paths: self.config_paths,
            seeds: self.seeds,
            outputs: self.outputs,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            followups: Vec::new(),
        }
    }

    /// Writes the directory's manifest. If one already exists this run is
    /// appended to it as a follow-up so the directory keeps exactly one.
    pub fn write(self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join(FILE_NAME);
        let run = self.finish();
        let manifest = match fs::read_to_string(&path) {
            Ok(text) => {
                let mut existing: RunManifest = serde_json::from_str(&text)
                    .map_err(|e| CliError::Runtime(format!("existing {} is malformed: {e}", path.display())))?;
                existing.followups.push(run);
                existing
            }
            Err(_) => run,
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, json + "\n").map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))
    }
}
