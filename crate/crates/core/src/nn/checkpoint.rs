//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        4 bytes  "CSPM"
//! version      u16      1
//! config_hash  u64      fingerprint of the architecture
//! count        u32      number of tensors
//! count × {
//!   name_len   u16
//!   name       name_len bytes, UTF-8
//!   rank       u8
//!   dims       rank × u32
//! }
//! data         for each tensor in table order, Π dims × f64
//! ```

use std::path::Path;

use serde::Serialize;

use super::layers::Module;
use super::model::ModelConfig;
use crate::fingerprint::config_hash;
use crate::binfmt::{put_f64s, put_u16, put_u32, put_u64, read_file, write_file, ByteReader};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CSPM";
pub const VERSION: u16 = 1;

/// Fingerprint of the encoder architecture and its input size, stored in
/// checkpoints so parameters are never loaded into a different network.
pub fn architecture_hash(model: &ModelConfig, input_hw: (usize, usize)) -> Result<u64> {
    #[derive(Serialize)]
    struct Architecture<'a> {
        num_antennas: usize,
        num_subcarriers: usize,
        model: &'a ModelConfig,
    }
    config_hash(&Architecture {
        num_antennas: input_hw.0,
        num_subcarriers: input_hw.1,
        model,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: u64,
    pub entries: Vec<CheckpointEntry>,
}

impl Checkpoint {
    /// Snapshot of every buffer of the given modules, in module order.
    pub fn capture(config_hash: u64, modules: &[&dyn Module]) -> Self {
        let entries = modules
            .iter()
            .flat_map(|m| m.params())
            .map(|p| CheckpointEntry {
                name: p.name.clone(),
                shape: p.shape.clone(),
                values: p.value.clone(),
            })
            .collect();
        Self { config_hash, entries }
    }

    /// Copies matching entries into the modules. Every buffer of the modules
    /// must be present with the same shape; extra entries are ignored.
    pub fn restore(&self, modules: &mut [&mut dyn Module]) -> Result<()> {
        for m in modules.iter_mut() {
            for p in m.params_mut() {
                let e = self
                    .entries
                    .iter()
                    .find(|e| e.name == p.name)
                    .ok_or_else(|| Error::Corrupt(format!("checkpoint lacks tensor {}", p.name)))?;
                if e.shape != p.shape {
                    return Err(Error::shape(format!("checkpoint tensor {}", p.name), format!("{:?}", p.shape), format!("{:?}", e.shape)));
                }
                p.value.copy_from_slice(&e.values);
            }
        }
        Ok(())
    }

    pub fn verify_hash(&self, expected: u64) -> Result<()> {
        if self.config_hash != expected {
            return Err(Error::ConfigHashMismatch {
                file: self.config_hash,
                expected,
            });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u16(&mut out, VERSION);
        put_u64(&mut out, self.config_hash);
        put_u32(&mut out, self.entries.len() as u32);
        for e in &self.entries {
            put_u16(&mut out, e.name.len() as u16);
            out.extend_from_slice(e.name.as_bytes());
            out.push(e.shape.len() as u8);
            for &d in &e.shape {
                put_u32(&mut out, d as u32);
            }
        }
        for e in &self.entries {
            put_f64s(&mut out, &e.values);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "checkpoint");
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::BadMagic("checkpoint".into()));
        }
        let version = r.u16("version")?;
        if version != VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: VERSION,
            });
        }
        let config_hash = r.u64("config hash")?;
        let count = r.u32("tensor count")? as usize;
        let mut table = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u16("name length")? as usize;
            let name = std::str::from_utf8(r.take(len, "name")?)
                .map_err(|_| Error::Corrupt("checkpoint tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u8("rank")? as usize;
            let shape = (0..rank).map(|_| r.u32("dim").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            table.push((name, shape));
        }
        let mut entries = Vec::with_capacity(table.len());
        for (name, shape) in table {
            let n = shape.iter().product();
            let values = r.f64_vec(n, &name)?;
            entries.push(CheckpointEntry { name, shape, values });
        }
        if r.remaining() != 0 {
            return Err(Error::CountMismatch(format!("checkpoint has {} trailing bytes", r.remaining())));
        }
        Ok(Self { config_hash, entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::{BatchNorm, Linear};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_restores_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lin = Linear::new("a", 3, 2, &mut rng);
        let bn = BatchNorm::new("b", 2, 0.1, 1e-5);
        let ck = Checkpoint::capture(42, &[&lin, &bn]);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        let mut fresh = Linear::new("a", 3, 2, &mut rng);
        assert_ne!(fresh.weight.value, lin.weight.value);
        back.restore(&mut [&mut fresh]).unwrap();
        assert_eq!(fresh.weight.value, lin.weight.value);
        assert!(back.verify_hash(43).is_err());
    }

    #[test]
    fn malformed_files_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lin = Linear::new("a", 3, 2, &mut rng);
        let bytes = Checkpoint::capture(7, &[&lin]).to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::BadMagic(_))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::VersionMismatch { .. })));
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Truncated(_))));
        let mut wrong = Linear::new("a", 4, 2, &mut rng);
        let ck = Checkpoint::from_bytes(&bytes).unwrap();
        assert!(matches!(ck.restore(&mut [&mut wrong]), Err(Error::Shape { .. })));
    }
}
