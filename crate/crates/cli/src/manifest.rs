//! Reproducibility manifest: config hash, tool versions, and a digest of
//! every emitted file. Re-running a scenario with the same configuration and
//! seed must reproduce the bundle byte for byte; the manifest is how that is
//! checked.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub package: String,
    pub version: String,
    pub config_sha256: String,
    pub seed: u64,
    /// Relative path -> sha256 of the file contents (sorted for determinism).
    pub files: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex_string(&hasher.finalize())
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl Manifest {
    pub fn new(config_text: &str, seed: u64) -> Self {
        Self {
            schema_version: crate::config::SCHEMA_VERSION,
            package: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: sha256_hex(config_text.as_bytes()),
            seed,
            files: BTreeMap::new(),
        }
    }

    pub fn record(&mut self, relative: &str, contents: &[u8]) {
        self.files.insert(relative.to_string(), sha256_hex(contents));
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(dir.join("manifest.json"), text)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(dir.join("manifest.json"))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Write a file and record its digest.
pub fn emit(manifest: &mut Manifest, dir: &Path, name: &str, contents: &[u8]) -> anyhow::Result<()> {
    std::fs::write(dir.join(name), contents)?;
    manifest.record(name, contents);
    Ok(())
}
