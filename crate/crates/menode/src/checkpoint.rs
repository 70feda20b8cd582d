//! Model and optimiser snapshots.
//!
//! ```text
//! MENODE-CHECKPOINT
//! version 1
//! sha256 <hex digest of payload>
//! length <payload bytes>
//! <JSON payload>
//! ```
//!
//! The version line is checked before anything else is parsed.

use std::io::Write;
use std::path::Path;

use menode_core::model::{MeNodeModel, ModelConfig};
use menode_core::train::TrainState;
use menode_core::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AppError, Result};

pub const MAGIC: &str = "MENODE-CHECKPOINT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Payload {
    model: ModelConfig,
    params: Vec<Tensor>,
    train: Option<TrainState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: MeNodeModel,
    /// Optimiser, counters and training config (which carries the seed).
    pub train: Option<TrainState>,
}

pub fn to_bytes(model: &MeNodeModel, train: Option<&TrainState>) -> Result<Vec<u8>> {
    let payload = Payload {
        model: model.config().clone(),
        params: model.params().to_vec(),
        train: train.cloned(),
    };
    let body = serde_json::to_vec(&payload).map_err(|e| AppError::Data(e.to_string()))?;
    let digest = hex::encode(Sha256::digest(&body));
    let mut out = format!("{MAGIC}\nversion {VERSION}\nsha256 {digest}\nlength {}\n", body.len()).into_bytes();
    out.extend_from_slice(&body);
    Ok(out)
}

pub fn save(path: &Path, model: &MeNodeModel, train: Option<&TrainState>) -> Result<()> {
    let bytes = to_bytes(model, train)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|source| AppError::MissingFile {
        path: path.to_path_buf(),
        source,
    })?;
    from_bytes(&bytes)
}

fn header_line<'a>(rest: &mut &'a [u8], what: &str) -> Result<&'a str> {
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| AppError::Integrity(format!("truncated before the {what} line")))?;
    let line = std::str::from_utf8(&rest[..nl])
        .map_err(|_| AppError::Integrity(format!("{what} line is not UTF-8")))?;
    *rest = &rest[nl + 1..];
    Ok(line)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let mut rest = bytes;
    if header_line(&mut rest, "magic")? != MAGIC {
        return Err(AppError::Integrity("not a checkpoint file".into()));
    }
    let version: u32 = header_line(&mut rest, "version")?
        .strip_prefix("version ")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| AppError::Integrity("malformed version line".into()))?;
    if version != VERSION {
        return Err(AppError::UnsupportedVersion {
            found: version,
            supported: VERSION,
        });
    }
    let digest = header_line(&mut rest, "sha256")?
        .strip_prefix("sha256 ")
        .ok_or_else(|| AppError::Integrity("malformed sha256 line".into()))?
        .to_string();
    let length: usize = header_line(&mut rest, "length")?
        .strip_prefix("length ")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| AppError::Integrity("malformed length line".into()))?;
    if rest.len() != length {
        return Err(AppError::Integrity(format!(
            "payload is {} bytes, header says {length}",
            rest.len()
        )));
    }
    if hex::encode(Sha256::digest(rest)) != digest {
        return Err(AppError::Integrity("checksum mismatch".into()));
    }
    let payload: Payload =
        serde_json::from_slice(rest).map_err(|e| AppError::Integrity(format!("payload: {e}")))?;
    let model = MeNodeModel::from_params(payload.model, payload.params)
        .map_err(|e| AppError::Integrity(format!("parameters: {e}")))?;
    Ok(Checkpoint {
        model,
        train: payload.train,
    })
}
