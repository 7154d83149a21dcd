//! Binary dataset files.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic            4 bytes  "CSIP"
//! version          u16      1
//! split            u8       0 pretrain, 1 labeled, 2 validation
//! config_hash      u64      fingerprint of the echoed scene config
//! config_len       u32
//! config           config_len bytes, TOML text of the scene config
//! num_antennas     u32
//! num_subcarriers  u32
//! record_count     u64
//! record_count × {
//!   time_index     u64
//!   csi_count      u32      V, number of CSI matrices
//!   azimuth_count  u32      V', number of detected azimuths
//!   has_truth      u8       0 or 1
//!   csi            V × num_antennas × num_subcarriers × (re, im) f64
//!   azimuths       V' × f64, degrees
//!   truth          if has_truth: V × (azimuth_deg, distance_m) f64
//! }
//! ```

use std::path::Path;

use num_complex::Complex64;

use crate::binfmt::{put_f64s, put_u16, put_u32, put_u64, read_file, write_file, ByteReader};
use crate::csi::ComplexCsiMatrix;
use crate::error::{Error, Result};
use crate::fingerprint::config_hash;
use crate::scene::{Dataset, PolarPosition, SceneConfig, Snapshot, SplitKind};

pub const MAGIC: &[u8; 4] = b"CSIP";
pub const VERSION: u16 = 1;

pub fn encode_dataset(ds: &Dataset) -> Result<Vec<u8>> {
    let scene_text = toml::to_string(&ds.scene).map_err(|e| Error::Config(format!("cannot serialize scene: {e}")))?;
    let (nb, nc) = (ds.scene.num_antennas, ds.scene.num_subcarriers);
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u16(&mut out, VERSION);
    out.push(ds.kind.code());
    put_u64(&mut out, config_hash(&ds.scene)?);
    put_u32(&mut out, scene_text.len() as u32);
    out.extend_from_slice(scene_text.as_bytes());
    put_u32(&mut out, nb as u32);
    put_u32(&mut out, nc as u32);
    put_u64(&mut out, ds.snapshots.len() as u64);
    for s in &ds.snapshots {
        if let Some(truth) = &s.truth_positions {
            if truth.len() != s.csi.len() {
                return Err(Error::CountMismatch(format!(
                    "snapshot {} has {} csi matrices and {} positions",
                    s.time_index,
                    s.csi.len(),
                    truth.len()
                )));
            }
        }
        put_u64(&mut out, s.time_index);
        put_u32(&mut out, s.csi.len() as u32);
        put_u32(&mut out, s.detected_azimuths.len() as u32);
        out.push(u8::from(s.truth_positions.is_some()));
        for h in &s.csi {
            if (h.num_antennas(), h.num_subcarriers()) != (nb, nc) {
                return Err(Error::shape(
                    format!("snapshot {} csi", s.time_index),
                    format!("{nb}x{nc}"),
                    format!("{}x{}", h.num_antennas(), h.num_subcarriers()),
                ));
            }
            for e in h.entries() {
                put_f64s(&mut out, &[e.re, e.im]);
            }
        }
        put_f64s(&mut out, &s.detected_azimuths);
        for p in s.truth_positions.iter().flatten() {
            put_f64s(&mut out, &[p.azimuth_deg, p.distance_m]);
        }
    }
    Ok(out)
}

/// Decodes a dataset. With `expected` set, the echoed scene must hash to the
/// same fingerprint (strict mode).
pub fn decode_dataset(bytes: &[u8], expected: Option<&SceneConfig>) -> Result<Dataset> {
    let mut r = ByteReader::new(bytes, "dataset");
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::BadMagic("dataset".into()));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let code = r.u8("split")?;
    let kind = SplitKind::from_code(code).ok_or_else(|| Error::Corrupt(format!("unknown split code {code}")))?;
    let stored_hash = r.u64("config hash")?;
    let len = r.u32("config length")? as usize;
    let text = std::str::from_utf8(r.take(len, "config")?)
        .map_err(|_| Error::Corrupt("scene config echo is not UTF-8".into()))?;
    let scene: SceneConfig = toml::from_str(text).map_err(|e| Error::Corrupt(format!("scene config echo: {e}")))?;
    let echo_hash = config_hash(&scene)?;
    if echo_hash != stored_hash {
        return Err(Error::Corrupt(format!(
            "header hash {stored_hash:016x} does not match the echoed config ({echo_hash:016x})"
        )));
    }
    if let Some(exp) = expected {
        let want = config_hash(exp)?;
        if want != stored_hash {
            return Err(Error::ConfigHashMismatch {
                file: stored_hash,
                expected: want,
            });
        }
    }
    let nb = r.u32("num_antennas")? as usize;
    let nc = r.u32("num_subcarriers")? as usize;
    if (nb, nc) != (scene.num_antennas, scene.num_subcarriers) {
        return Err(Error::CountMismatch(format!(
            "header says {nb}x{nc} csi, scene config says {}x{}",
            scene.num_antennas, scene.num_subcarriers
        )));
    }
    let count = r.u64("record count")?;
    let mut snapshots = Vec::with_capacity((count as usize).min(1 << 20));
    for i in 0..count {
        let time_index = r.u64("time index")?;
        let v = r.u32("csi count")? as usize;
        let v_img = r.u32("azimuth count")? as usize;
        let has_truth = match r.u8("truth flag")? {
            0 => false,
            1 => true,
            f => return Err(Error::Corrupt(format!("record {i}: truth flag {f}"))),
        };
        let mut csi = Vec::with_capacity(v.min(1 << 16));
        for _ in 0..v {
            let raw = r.f64_vec(nb * nc * 2, "csi payload")?;
            let entries = raw.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect();
            csi.push(ComplexCsiMatrix::from_entries(nb, nc, entries)?);
        }
        let detected_azimuths = r.f64_vec(v_img, "azimuths")?;
        let truth_positions = if has_truth {
            let raw = r.f64_vec(2 * v, "truth")?;
            Some(
                raw.chunks_exact(2)
                    .map(|p| PolarPosition {
                        azimuth_deg: p[0],
                        distance_m: p[1],
                    })
                    .collect(),
            )
        } else {
            None
        };
        snapshots.push(Snapshot {
            time_index,
            csi,
            detected_azimuths,
            truth_positions,
        });
    }
    if r.remaining() != 0 {
        return Err(Error::CountMismatch(format!(
            "{} bytes follow the {count} declared records",
            r.remaining()
        )));
    }
    Ok(Dataset { kind, scene, snapshots })
}

pub fn save_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    write_file(path, &encode_dataset(ds)?)
}

pub fn load_dataset(path: &Path, expected: Option<&SceneConfig>) -> Result<Dataset> {
    decode_dataset(&read_file(path)?, expected)
}

/// Conventional file name of a split inside a data directory.
pub fn split_file_name(kind: SplitKind) -> String {
    format!("{}.csip", kind.name())
}
