use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::hex;
use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// A file written by a run, relative to the output directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Seeds of one family of replicates: replicate `r` uses
/// `replicate_seed(master, r)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedStream {
    pub name: String,
    pub master: u64,
    pub replicate_seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Complete,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentEntry {
    pub index: usize,
    pub kind: String,
    pub directory: String,
    pub seed: u64,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub streams: Vec<SeedStream>,
    /// Path of the experiment summary among `files`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub incomplete: bool,
    pub experiments: Vec<ExperimentEntry>,
    /// Every file of the run except the manifest itself.
    pub files: Vec<FileEntry>,
    pub timings: Vec<Timing>,
}

impl RunManifest {
    pub fn new(config_hash: String, master_seed: u64) -> Self {
        Self {
            tool: "froglab".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash,
            master_seed,
            incomplete: true,
            experiments: Vec::new(),
            files: Vec::new(),
            timings: Vec::new(),
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Json { path, message: e.to_string() })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        fs::write(&path, text).map_err(|e| CliError::io(path, e))
    }

    /// Reads a listed file after checking its recorded checksum.
    pub fn read_verified(&self, dir: &Path, relative: &str) -> Result<Vec<u8>> {
        let path = dir.join(relative);
        let entry = self.files.iter().find(|f| f.path == relative).ok_or_else(|| CliError::ChecksumMismatch(path.clone()))?;
        let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
        if sha256(&bytes) != entry.sha256 {
            return Err(CliError::ChecksumMismatch(path));
        }
        Ok(bytes)
    }
}

pub(crate) fn sha256(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// Writes files under the output directory and records them for the manifest.
pub(crate) struct OutputDir {
    pub root: PathBuf,
    pub files: Vec<FileEntry>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(Self { root: root.to_path_buf(), files: Vec::new() })
    }

    pub fn write(&mut self, relative: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let bytes = contents.as_ref();
        let path = self.root.join(relative);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.files.retain(|f| f.path != relative);
        self.files.push(FileEntry { path: relative.to_string(), bytes: bytes.len() as u64, sha256: sha256(bytes) });
        Ok(())
    }
}
