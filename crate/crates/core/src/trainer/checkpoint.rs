use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Model, OptimizerState, TrainConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub step: u64,
    pub model: Model,
    pub optimizer: OptimizerState,
    pub config_hash: String,
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    body: serde_json::Value,
    sha256: String,
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of the canonical JSON form of a training configuration.
pub fn config_hash(cfg: &TrainConfig) -> String {
    let v = serde_json::to_value(cfg).expect("config serializes");
    sha256_hex(v.to_string().as_bytes())
}

impl Checkpoint {
    /// Write to a sibling temporary file, then rename over `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let body = serde_json::to_value(self)?;
        let env = Envelope {
            sha256: sha256_hex(body.to_string().as_bytes()),
            body,
        };
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(serde_json::to_string_pretty(&env)?.as_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let env: Envelope = serde_json::from_str(&fs::read_to_string(path)?)?;
        if sha256_hex(env.body.to_string().as_bytes()) != env.sha256 {
            return Err(Error::Integrity("checkpoint checksum mismatch".into()));
        }
        let ck: Checkpoint = serde_json::from_value(env.body)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Integrity(format!(
                "checkpoint version {} is not {CHECKPOINT_VERSION}",
                ck.version
            )));
        }
        ck.model.params.validate()?;
        if ck.optimizer.m.weights.len() != ck.model.params.dim() || ck.optimizer.v.weights.len() != ck.model.params.dim() {
            return Err(Error::Integrity("optimizer state does not match parameters".into()));
        }
        Ok(ck)
    }
}
