//! Run manifests: what was produced, from which config, with checksums.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// An in-memory output file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub contents: Vec<u8>,
}

impl Artifact {
    pub fn new(name: impl Into<String>, contents: impl Into<Vec<u8>>) -> Self {
        Self {
            name: name.into(),
            contents: contents.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub scenario: String,
    pub config_sha256: String,
    pub version: String,
    pub wall_clock_seconds: f64,
    pub files: Vec<FileEntry>,
    pub verdicts: BTreeMap<String, String>,
    /// Per-cell or per-run failures that did not abort the command.
    pub failures: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, scenario: &str, canonical_config: &str) -> Self {
        Self {
            command: command.into(),
            scenario: scenario.into(),
            config_sha256: sha256_hex(canonical_config.as_bytes()),
            version: env!("CARGO_PKG_VERSION").into(),
            wall_clock_seconds: 0.0,
            files: Vec::new(),
            verdicts: BTreeMap::new(),
            failures: Vec::new(),
        }
    }

    /// Writes every artifact into `dir`, then the manifest listing them.
    pub fn write_all(mut self, dir: &Path, artifacts: &[Artifact]) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        self.files.clear();
        for a in artifacts {
            std::fs::write(dir.join(&a.name), &a.contents)?;
            self.files.push(FileEntry {
                path: a.name.clone(),
                sha256: sha256_hex(&a.contents),
                bytes: a.contents.len() as u64,
            });
        }
        let json = serde_json::to_string_pretty(&self).expect("manifest serializes");
        std::fs::write(dir.join(MANIFEST_FILE), json)?;
        Ok(self)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
        serde_json::from_str(&text).map_err(|e| crate::Error::Config(format!("manifest: {e}")))
    }

    /// Files whose on-disk checksum differs from the recorded one.
    pub fn mismatches(&self, dir: &Path) -> Vec<String> {
        self.files
            .iter()
            .filter(|f| {
                std::fs::read(dir.join(&f.path))
                    .map_or(true, |bytes| sha256_hex(&bytes) != f.sha256)
            })
            .map(|f| f.path.clone())
            .collect()
    }
}
