use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Serialize)]
pub struct OutputDigest {
    pub path: String,
    pub sha256: String,
}

/// Record of one invocation, written as `manifest.json` in the output
/// directory.
#[derive(Serialize)]
pub struct RunManifest {
    pub command_line: Vec<String>,
    pub config: serde_json::Value,
    pub master_seed: Option<u64>,
    pub code_version: &'static str,
    pub started_at: String,
    pub finished_at: String,
    pub exit_code: i32,
    pub result: serde_json::Value,
    pub outputs: Vec<OutputDigest>,
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Collects the files written by a command.
#[derive(Default)]
pub struct Outputs {
    files: Vec<PathBuf>,
}

impl Outputs {
    pub fn add(&mut self, path: PathBuf) {
        self.files.push(path);
    }

    pub fn digests(&self, base: &Path) -> std::io::Result<Vec<OutputDigest>> {
        self.files
            .iter()
            .map(|p| {
                let rel = p.strip_prefix(base).unwrap_or(p);
                Ok(OutputDigest {
                    path: rel.display().to_string(),
                    sha256: sha256_file(p)?,
                })
            })
            .collect()
    }
}
