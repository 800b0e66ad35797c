//! Run manifest: every output directory carries a `manifest.json` naming
//! the command, its inputs with content hashes, the options that mattered,
//! and the wall time, so runs are self-describing.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: Vec<InputRecord>,
    pub options: Vec<(String, String)>,
    pub output_dir: String,
    pub wall_time_s: f64,
    #[serde(skip)]
    out_dir: PathBuf,
}

#[derive(Serialize)]
pub struct InputRecord {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

impl RunManifest {
    pub fn new(command: &str, out_dir: &Path) -> Self {
        RunManifest {
            command: command.to_string(),
            inputs: Vec::new(),
            options: Vec::new(),
            output_dir: out_dir.display().to_string(),
            wall_time_s: 0.0,
            out_dir: out_dir.to_path_buf(),
        }
    }

    pub fn input(mut self, role: &str, path: &Path) -> Result<Self, String> {
        let bytes =
            std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let hash: String = Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        self.inputs.push(InputRecord {
            role: role.to_string(),
            path: path.display().to_string(),
            sha256: hash,
        });
        Ok(self)
    }

    pub fn option(mut self, key: &str, value: &str) -> Self {
        self.options.push((key.to_string(), value.to_string()));
        self
    }

    pub fn finish(mut self, elapsed: Duration) -> Result<(), String> {
        self.wall_time_s = elapsed.as_secs_f64();
        let json = serde_json::to_string_pretty(&self).map_err(|e| e.to_string())?;
        let path = self.out_dir.join("manifest.json");
        std::fs::write(&path, json).map_err(|e| format!("{}: {e}", path.display()))
    }
}
