//! Single-file checkpoints.
//!
//! Layout: the 8-byte magic `SGCKPT\0\x01`, a little-endian `u64` length of
//! the JSON descriptor, the descriptor itself, then θ and φ as little-endian
//! `f64` values in segment order.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::models::{MlcArch, SeqArch};
use crate::tensor::{Layout, ParamVector};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SGCKPT\0\x01";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum Architecture {
    Mlc { arch: MlcArch },
    Seq { arch: SeqArch, vocab: Vec<String>, tags: Vec<String> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Descriptor {
    pub architecture: Architecture,
    pub theta: Layout,
    pub phi: Layout,
    pub config_sha256: String,
    pub regime: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub descriptor: Descriptor,
    pub theta: ParamVector,
    pub phi: ParamVector,
}

impl Checkpoint {
    pub fn new(architecture: Architecture, theta: ParamVector, phi: ParamVector, config_sha256: &str, regime: &str) -> Self {
        Checkpoint {
            descriptor: Descriptor {
                architecture,
                theta: (**theta.layout()).clone(),
                phi: (**phi.layout()).clone(),
                config_sha256: config_sha256.to_string(),
                regime: regime.to_string(),
            },
            theta,
            phi,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let json = serde_json::to_vec(&self.descriptor)?;
        let mut out = Vec::with_capacity(16 + json.len() + 8 * (self.theta.len() + self.phi.len()));
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for v in self.theta.as_slice().iter().chain(self.phi.as_slice()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Format(format!("checkpoint: {msg}"));
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("missing magic header"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes.get(16..16usize.saturating_add(len)).ok_or_else(|| bad("truncated descriptor"))?;
        let descriptor: Descriptor = serde_json::from_slice(body)?;
        let floats = &bytes[16 + len..];
        let (nt, np) = (descriptor.theta.len(), descriptor.phi.len());
        if floats.len() != 8 * (nt + np) {
            return Err(bad(&format!("expected {} parameter bytes, found {}", 8 * (nt + np), floats.len())));
        }
        let values: Vec<f64> =
            floats.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let theta = ParamVector::from_flat(Arc::new(descriptor.theta.clone()), values[..nt].to_vec())?;
        let phi = ParamVector::from_flat(Arc::new(descriptor.phi.clone()), values[nt..].to_vec())?;
        Ok(Checkpoint { descriptor, theta, phi })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
