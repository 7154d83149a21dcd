//! Stable 64-bit fingerprints of serializable configuration.

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// First eight bytes (little-endian) of the SHA-256 digest of the value's
/// TOML serialization.
pub fn config_hash<T: Serialize + ?Sized>(value: &T) -> Result<u64> {
    let text = toml::to_string(value).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))?;
    Ok(hash_bytes(text.as_bytes()))
}

pub fn hash_bytes(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(head)
}
