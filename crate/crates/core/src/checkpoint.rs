//! Persisted assemblies and content hashes.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::assembly::PrimitiveAssembly;
use crate::{Error, Result};

/// Bumped whenever the on-disk layout changes.
pub const CHECKPOINT_VERSION: u32 = 1;

/// A fitted assembly plus the hash of the configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: String,
    pub assembly: PrimitiveAssembly,
}

impl Checkpoint {
    pub fn new(assembly: PrimitiveAssembly, config_hash: String) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            config_hash,
            assembly,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    /// Reads and checks a checkpoint. Anything structurally wrong with the
    /// file is reported as a data-integrity error.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let ck: Checkpoint =
            serde_json::from_slice(&bytes).map_err(|e| Error::Integrity(format!("{}: {e}", path.display())))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Integrity(format!(
                "{}: checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                path.display(),
                ck.version
            )));
        }
        ck.assembly
            .validate()
            .map_err(|e| Error::Integrity(format!("{}: {e}", path.display())))?;
        Ok(ck)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

/// SHA-256 of the compact JSON form of `value`. Struct fields serialize in
/// declaration order, so equal configs hash equally.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(value)?))
}
