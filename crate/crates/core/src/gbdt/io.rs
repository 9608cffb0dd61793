//! Model container: magic, version byte, payload length, JSON payload and a
//! SHA-256 checksum of the payload.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{BoostedModel, GbdtError};

const MAGIC: &[u8; 8] = b"RSGBDT\0\0";
pub const MODEL_FORMAT_VERSION: u8 = 1;
const HEADER_LEN: usize = MAGIC.len() + 1 + 8;
const CHECKSUM_LEN: usize = 32;

pub fn write_model(model: &BoostedModel) -> Vec<u8> {
    let payload = serde_json::to_vec(model).expect("models always serialize");
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + CHECKSUM_LEN);
    out.extend_from_slice(MAGIC);
    out.push(MODEL_FORMAT_VERSION);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&Sha256::digest(&payload));
    out
}

pub fn read_model(bytes: &[u8]) -> Result<BoostedModel, GbdtError> {
    if bytes.len() < HEADER_LEN || &bytes[..MAGIC.len()] != MAGIC {
        return Err(GbdtError::Corrupt("missing model header".into()));
    }
    let version = bytes[MAGIC.len()];
    if version != MODEL_FORMAT_VERSION {
        return Err(GbdtError::VersionMismatch {
            expected: MODEL_FORMAT_VERSION,
            found: version,
        });
    }
    let mut len = [0u8; 8];
    len.copy_from_slice(&bytes[MAGIC.len() + 1..HEADER_LEN]);
    let len = usize::try_from(u64::from_le_bytes(len))
        .map_err(|_| GbdtError::Corrupt("payload length overflow".into()))?;
    let expected_total = HEADER_LEN
        .checked_add(len)
        .and_then(|n| n.checked_add(CHECKSUM_LEN))
        .ok_or_else(|| GbdtError::Corrupt("payload length overflow".into()))?;
    if bytes.len() != expected_total {
        return Err(GbdtError::Corrupt(format!(
            "expected {expected_total} bytes, found {}",
            bytes.len()
        )));
    }
    let payload = &bytes[HEADER_LEN..HEADER_LEN + len];
    if Sha256::digest(payload).as_slice() != &bytes[HEADER_LEN + len..] {
        return Err(GbdtError::Corrupt("checksum mismatch".into()));
    }
    let model: BoostedModel = serde_json::from_slice(payload)
        .map_err(|e| GbdtError::Corrupt(format!("bad payload: {e}")))?;
    model.check()?;
    Ok(model)
}

pub fn save_model(model: &BoostedModel, path: impl AsRef<Path>) -> Result<(), GbdtError> {
    fs::write(path, write_model(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<BoostedModel, GbdtError> {
    read_model(&fs::read(path)?)
}
