//! Checkpoint files: the codec configuration, free-form provenance and all
//! parameters. Streams record the SHA-256 of the checkpoint bytes.
//!
//! ```text
//! "HBCK" version:u32 json_len:u32 json parameters
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CodecConfig, Model};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"HBCK";
const VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: CodecConfig,
    /// Training settings and history; not interpreted by the codec.
    #[serde(default)]
    pub provenance: serde_json::Value,
}

pub struct Checkpoint {
    pub model: Model,
    pub provenance: serde_json::Value,
    pub hash: [u8; 32],
}

impl Checkpoint {
    /// Wraps a model, computing the hash of its serialized form.
    pub fn from_model(model: Model, provenance: serde_json::Value) -> Result<Self> {
        let bytes = to_bytes(&model, &provenance)?;
        Ok(Checkpoint {
            model,
            provenance,
            hash: sha256(&bytes),
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        to_bytes(&self.model, &self.provenance)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(Error::CheckpointMismatch("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::CheckpointMismatch(format!("unsupported checkpoint version {version}")));
        }
        let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let json = bytes
            .get(12..12 + n)
            .ok_or_else(|| Error::Truncated("checkpoint metadata".into()))?;
        let meta: CheckpointMeta = serde_json::from_slice(json)?;
        let model = Model::new(meta.config, 0)?;
        model.store.read_from(&bytes[12 + n..])?;
        Ok(Checkpoint {
            model,
            provenance: meta.provenance,
            hash: sha256(bytes),
        })
    }

    pub fn hash_hex(&self) -> String {
        hex(&self.hash)
    }
}

fn to_bytes(model: &Model, provenance: &serde_json::Value) -> Result<Vec<u8>> {
    let meta = CheckpointMeta {
        config: model.config.clone(),
        provenance: provenance.clone(),
    };
    let json = serde_json::to_vec(&meta)?;
    let mut out = Vec::new();
    out.extend(MAGIC);
    out.extend(VERSION.to_le_bytes());
    out.extend((json.len() as u32).to_le_bytes());
    out.extend(json);
    model.store.write_to(&mut out)?;
    Ok(out)
}

pub fn sha256(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, ck.to_bytes()?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    Checkpoint::from_bytes(&bytes)
}
