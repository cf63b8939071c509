//! Checkpoint layout: magic `PFE1`, `u32` config length, config JSON,
//! `u64` parameter count, then every parameter as a little-endian `f32`
//! in construction order (see [`FrontEndModel`] for the block order).

use std::path::Path;

use super::config::ModelConfig;
use super::network::FrontEndModel;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"PFE1";

impl FrontEndModel {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let config = serde_json::to_vec(&self.config)?;
        let n = self.params.count();
        let mut out = Vec::with_capacity(16 + config.len() + 4 * n);
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&(config.len() as u32).to_le_bytes());
        out.extend_from_slice(&config);
        out.extend_from_slice(&(n as u64).to_le_bytes());
        for b in &self.params.blocks {
            for &v in &b.data {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::BadModel(m);
        if bytes.len() < 8 || bytes[..4] != CHECKPOINT_MAGIC {
            return Err(bad("not a PFE1 checkpoint".into()));
        }
        let clen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let cend = 8 + clen;
        if bytes.len() < cend + 8 {
            return Err(bad("truncated header".into()));
        }
        let config: ModelConfig = serde_json::from_slice(&bytes[8..cend])?;
        let n = u64::from_le_bytes(bytes[cend..cend + 8].try_into().unwrap()) as usize;
        let body = &bytes[cend + 8..];
        if body.len() != 4 * n {
            return Err(bad(format!(
                "header declares {n} parameters but {} bytes follow",
                body.len()
            )));
        }
        let values = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Self::with_values(config, values)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::BadModel(m) => Error::BadModel(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
