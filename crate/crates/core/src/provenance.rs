//! Hashes and run manifests.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{IoContext, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// SHA-256 of the compact JSON encoding; field order follows the type
/// definitions, so equal values always hash equally.
pub fn config_hash<C: Serialize>(config: &C) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(config)?))
}

pub fn unix_time() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn tool_version() -> String {
    format!("elf-core {}", env!("CARGO_PKG_VERSION"))
}

/// Written next to every artifact: what produced it, from which inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    pub version: String,
    pub created_unix: u64,
    pub config: serde_json::Value,
    pub config_hash: String,
    /// Content hashes of inputs and outputs by role.
    pub hashes: IndexMap<String, String>,
    /// Output files relative to the manifest.
    pub files: Vec<String>,
}

impl Manifest {
    pub fn new<C: Serialize>(kind: &str, config: &C) -> Result<Self> {
        Ok(Self {
            kind: kind.to_string(),
            version: tool_version(),
            created_unix: unix_time(),
            config: serde_json::to_value(config)?,
            config_hash: config_hash(config)?,
            hashes: IndexMap::new(),
            files: Vec::new(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_vec_pretty(self)?).at(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Ok(serde_json::from_slice(&std::fs::read(path).at(path)?)?)
    }
}

/// Writes `value` as pretty JSON.
pub fn write_json<V: Serialize>(path: impl AsRef<Path>, value: &V) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, serde_json::to_vec_pretty(value)?).at(path)
}

pub fn read_json<V: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<V> {
    let path = path.as_ref();
    Ok(serde_json::from_slice(&std::fs::read(path).at(path)?)?)
}
