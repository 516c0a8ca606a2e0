//! Checkpoint files: a header line `hygo-checkpoint <version> <sha256>`
//! followed by the JSON run state the digest covers.

use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::RunState;
use crate::error::CheckpointError;

pub const CHECKPOINT_VERSION: u32 = 1;

const MAGIC: &str = "hygo-checkpoint";

fn digest_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn encode_checkpoint(state: &RunState) -> Result<Vec<u8>, CheckpointError> {
    let payload = serde_json::to_vec(state).map_err(|e| CheckpointError::Corrupted(format!("encoding failed: {e}")))?;
    let mut blob = format!("{MAGIC} {CHECKPOINT_VERSION} {}\n", digest_hex(&payload)).into_bytes();
    blob.extend_from_slice(&payload);
    Ok(blob)
}

pub fn decode_checkpoint(blob: &[u8]) -> Result<RunState, CheckpointError> {
    let corrupted = |m: &str| CheckpointError::Corrupted(m.to_string());
    let split = blob.iter().position(|&b| b == b'\n').ok_or_else(|| corrupted("missing header"))?;
    let header = std::str::from_utf8(&blob[..split]).map_err(|_| corrupted("header is not text"))?;
    let mut fields = header.split(' ');
    if fields.next() != Some(MAGIC) {
        return Err(corrupted("not a checkpoint file"));
    }
    let version: u32 = fields
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| corrupted("bad version field"))?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let digest = fields.next().ok_or_else(|| corrupted("missing digest"))?;
    let payload = &blob[split + 1..];
    if digest_hex(payload) != digest {
        return Err(corrupted("digest mismatch (truncated or modified file)"));
    }
    serde_json::from_slice(payload).map_err(|e| CheckpointError::Corrupted(format!("payload: {e}")))
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
    }
    fs::rename(&tmp, path)
}

pub fn save_checkpoint(path: &Path, state: &RunState) -> Result<(), CheckpointError> {
    let blob = encode_checkpoint(state)?;
    write_atomic(path, &blob).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<RunState, CheckpointError> {
    let blob = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_checkpoint(&blob)
}
