//! Flat-parameter checkpoints: little-endian binary container with a
//! 16-byte magic/version header followed by a config hash, the parameter
//! count, and the raw f64 values.
//!
//! ```text
//! offset  0  "SDIFCKPT"          8 bytes
//! offset  8  version u32 LE      4 bytes
//! offset 12  reserved u32 LE     4 bytes
//! offset 16  config hash u64 LE  8 bytes
//! offset 24  param count u64 LE  8 bytes
//! offset 32  params f64 LE       count * 8 bytes
//! ```

use std::fs;
use std::path::Path;

use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"SDIFCKPT";

/// Current container version.
pub const CHECKPOINT_VERSION: u32 = 1;

/// FNV-1a 64-bit hash; stable across platforms and releases, used to bind a
/// checkpoint to the run configuration that produced it.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub fn save_checkpoint(path: &Path, params: &[f64], config_hash: u64) -> Result<()> {
    let mut buf = Vec::with_capacity(32 + params.len() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    buf.extend_from_slice(&config_hash.to_le_bytes());
    buf.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

/// Loads a checkpoint, returning the parameters and the stored config hash.
/// When `expected_hash` is given, a mismatch is rejected.
pub fn load_checkpoint(path: &Path, expected_hash: Option<u64>) -> Result<(Vec<f64>, u64)> {
    let bytes = fs::read(path)?;
    if bytes.len() < 32 {
        return Err(Error::Checkpoint(format!(
            "file too short ({} bytes)",
            bytes.len()
        )));
    }
    if &bytes[0..8] != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let stored_hash = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    if let Some(expected) = expected_hash {
        if stored_hash != expected {
            return Err(Error::Checkpoint(format!(
                "config hash mismatch: stored {stored_hash:#018x}, expected {expected:#018x}"
            )));
        }
    }
    let count = u64::from_le_bytes(bytes[24..32].try_into().unwrap()) as usize;
    if bytes.len() != 32 + count * 8 {
        return Err(Error::Checkpoint(format!(
            "size mismatch: header claims {count} params but payload is {} bytes",
            bytes.len() - 32
        )));
    }
    let params = bytes[32..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((params, stored_hash))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        let params = vec![0.5, -1.25, f64::MIN_POSITIVE, 1e300];
        save_checkpoint(&path, &params, 0xDEAD_BEEF).unwrap();
        let (loaded, hash) = load_checkpoint(&path, Some(0xDEAD_BEEF)).unwrap();
        assert_eq!(loaded, params);
        assert_eq!(hash, 0xDEAD_BEEF);
    }

    #[test]
    fn rejects_corruption_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        save_checkpoint(&path, &[1.0, 2.0], 7).unwrap();

        assert!(matches!(
            load_checkpoint(&path, Some(8)),
            Err(Error::Checkpoint(_))
        ));

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path, None),
            Err(Error::Checkpoint(_))
        ));

        std::fs::write(&path, b"short").unwrap();
        assert!(load_checkpoint(&path, None).is_err());
    }

    #[test]
    fn fnv_is_stable() {
        // Reference value for the empty string and a known probe.
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_ne!(fnv1a64(b"config-a"), fnv1a64(b"config-b"));
    }
}
