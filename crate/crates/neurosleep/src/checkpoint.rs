//! NSC1 checkpoint. Little-endian:
//!
//! ```text
//! "NSC1" | version u16 | metadata length u32 | metadata JSON
//! | parameter count u64 | parameters f64, registry order
//! ```
//!
//! The metadata carries the model configuration, so loading rebuilds every
//! tensor shape before the values are read back.

use std::path::Path;

use neurosleep_core::model::{param_count, ModelConfig, ModelParams};
use neurosleep_core::train::{EpochStats, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::Reader;

pub const MAGIC: &[u8; 4] = b"NSC1";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub best_epoch: usize,
    /// Validation scores of `best_epoch`.
    pub metrics: Option<EpochStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let expected = param_count(&self.meta.model);
        let flat = self.params.flatten();
        if flat.len() != expected {
            return Err(Error::Format(format!(
                "parameters hold {} values, the configuration needs {expected}",
                flat.len()
            )));
        }
        let meta = serde_json::to_vec(&self.meta).map_err(|e| Error::Format(format!("checkpoint metadata: {e}")))?;
        let meta_len = u32::try_from(meta.len()).map_err(|_| Error::Format("checkpoint metadata too large".into()))?;
        let mut out = Vec::with_capacity(18 + meta.len() + 8 * flat.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&meta_len.to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(flat.len() as u64).to_le_bytes());
        for v in flat {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "checkpoint");
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic, expected NSC1)".into()));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::Format(format!("checkpoint version {version} is not supported (expected {VERSION})")));
        }
        let len = r.u32()? as usize;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(len)?)
            .map_err(|e| Error::Format(format!("checkpoint metadata: {e}")))?;
        meta.model.validate()?;
        let count = r.u64()?;
        let expected = param_count(&meta.model);
        if count != expected as u64 {
            return Err(Error::Format(format!(
                "checkpoint stores {count} parameters, its model configuration needs {expected}"
            )));
        }
        let values = (0..expected).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        r.finish()?;
        let mut params = ModelParams::zeros(&meta.model);
        params.load_flat(&values)?;
        Ok(Self { meta, params })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| e.in_file(path))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::io::write_file(path, &self.to_bytes()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use neurosleep_core::gradcheck::tiny_config;

    fn tiny() -> Checkpoint {
        let model = tiny_config();
        Checkpoint {
            params: ModelParams::init(&model, 4).unwrap(),
            meta: CheckpointMeta {
                model,
                train: TrainConfig::default(),
                best_epoch: 3,
                metrics: None,
            },
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = tiny();
        let b = c.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&b).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes().unwrap(), b);
    }

    #[test]
    fn size_is_parameters_plus_header() {
        let c = tiny();
        let b = c.to_bytes().unwrap();
        let n = param_count(&c.meta.model);
        let meta = serde_json::to_vec(&c.meta).unwrap().len();
        assert_eq!(b.len(), 8 * n + 4 + 2 + 4 + meta + 8);
    }

    #[test]
    fn rejects_truncation_version_and_shape() {
        let c = tiny();
        let b = c.to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&b[..b.len() - 8]).is_err());
        let mut v = b.clone();
        v[4] = 9;
        assert!(Checkpoint::from_bytes(&v).unwrap_err().to_string().contains("version"));

        // metadata claims a wider model than the stored values
        let mut wide = c.clone();
        wide.meta.model.filters = 4;
        let meta = serde_json::to_vec(&wide.meta).unwrap();
        let mut forged = Vec::new();
        forged.extend_from_slice(MAGIC);
        forged.extend_from_slice(&VERSION.to_le_bytes());
        forged.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        forged.extend_from_slice(&meta);
        let flat = c.params.flatten();
        forged.extend_from_slice(&(flat.len() as u64).to_le_bytes());
        for x in flat {
            forged.extend_from_slice(&x.to_le_bytes());
        }
        assert!(Checkpoint::from_bytes(&forged).unwrap_err().to_string().contains("parameters"));
    }
}
