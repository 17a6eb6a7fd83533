use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::CliError;

pub const RESOLVED_CONFIG: &str = "config.resolved.json";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Serialize)]
struct Artifact {
    name: String,
    bytes: u64,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    master_seed: u64,
    artifacts: &'a [Artifact],
}

/// Output directory that remembers what it wrote, for the manifest.
pub struct OutputDir {
    dir: PathBuf,
    artifacts: Vec<Artifact>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
        Ok(OutputDir { dir: dir.to_path_buf(), artifacts: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, data: &[u8]) -> Result<(), CliError> {
        let p = self.path(name);
        fs::write(&p, data).map_err(|e| CliError::Io(format!("cannot write {}: {e}", p.display())))?;
        self.record(name)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    /// Hashes a file that was written directly under this directory.
    pub fn record(&mut self, name: &str) -> Result<(), CliError> {
        let p = self.path(name);
        let data = fs::read(&p).map_err(|e| CliError::Io(format!("cannot read {}: {e}", p.display())))?;
        log::info!("wrote {}", p.display());
        self.artifacts.push(Artifact {
            name: name.to_string(),
            bytes: data.len() as u64,
            sha256: hex(&Sha256::digest(&data)),
        });
        Ok(())
    }

    /// Writes the resolved config and the manifest of everything written so far.
    pub fn finish(mut self, command: &str, cfg: &ExperimentConfig) -> Result<(), CliError> {
        self.write_json(RESOLVED_CONFIG, cfg)?;
        let m = Manifest { command, master_seed: cfg.seeds.master, artifacts: &self.artifacts };
        let mut s = serde_json::to_string_pretty(&m)?;
        s.push('\n');
        let p = self.path(MANIFEST);
        fs::write(&p, s).map_err(|e| CliError::Io(format!("cannot write {}: {e}", p.display())))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
