//! Single-file checkpoints: one header line, then the trained model as JSON.
//!
//! ```text
//! dlsm-checkpoint 1 sha256=<hex of payload> config=<config hash>
//! {"model": ...}
//! ```
//!
//! Floats are written with round-trip precision, so loading reproduces every parameter
//! bit for bit.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::config::ModelConfig;
use crate::error::{DlsmError, Result};
use crate::trainer::TrainedModel;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "dlsm-checkpoint";

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Serialises `tm` to the checkpoint byte format.
pub fn to_bytes(tm: &TrainedModel) -> Result<Vec<u8>> {
    let payload = serde_json::to_vec(tm)?;
    let header = format!("{MAGIC} {FORMAT_VERSION} sha256={} config={}\n", hex_digest(&payload), tm.config_hash);
    let mut out = header.into_bytes();
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Parses the checkpoint byte format, verifying version and checksum.
pub fn from_bytes(bytes: &[u8]) -> Result<TrainedModel> {
    let split = bytes.iter().position(|&b| b == b'\n').ok_or(DlsmError::Checksum)?;
    let header = std::str::from_utf8(&bytes[..split]).map_err(|_| DlsmError::Checkpoint("header is not UTF-8".into()))?;
    let payload = &bytes[split + 1..];

    let fields: Vec<&str> = header.split(' ').collect();
    if fields.len() != 4 || fields[0] != MAGIC {
        return Err(DlsmError::Checkpoint(format!("unrecognised header `{header}`")));
    }
    let found: u32 = fields[1].parse().map_err(|_| DlsmError::Checkpoint(format!("bad version `{}`", fields[1])))?;
    if found != FORMAT_VERSION {
        return Err(DlsmError::IncompatibleVersion { found, expected: FORMAT_VERSION });
    }
    let digest = fields[2].strip_prefix("sha256=").ok_or_else(|| DlsmError::Checkpoint("missing checksum".into()))?;
    let config_hash = fields[3].strip_prefix("config=").ok_or_else(|| DlsmError::Checkpoint("missing config hash".into()))?;
    if hex_digest(payload) != digest {
        return Err(DlsmError::Checksum);
    }

    let tm: TrainedModel = serde_json::from_slice(payload)?;
    if tm.config_hash != config_hash {
        return Err(DlsmError::Checkpoint("header and payload disagree on the config hash".into()));
    }
    if tm.model.config.hash() != config_hash {
        log::warn!(
            "checkpoint config hash {config_hash} differs from the hash of its stored config ({}); \
             it was probably written by a different version",
            tm.model.config.hash()
        );
    }
    Ok(tm)
}

pub fn save_checkpoint(tm: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(tm)?).map_err(|e| DlsmError::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| DlsmError::io(path, e))?;
    from_bytes(&bytes)
}

/// Warning text when a checkpoint was trained under a different configuration than `expected`.
pub fn config_mismatch(tm: &TrainedModel, expected: &ModelConfig) -> Option<String> {
    let want = expected.hash();
    (tm.config_hash != want).then(|| {
        format!("checkpoint was trained with config {} but the current config hashes to {want}", tm.config_hash)
    })
}
