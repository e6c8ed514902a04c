//! NSE1 epoch store. Little-endian:
//!
//! ```text
//! "NSE1" | version u16 | channels u16 | samples per epoch u32 | count u32
//! per epoch: id length u16 | id UTF-8 | epoch index u32 | label u8 | C·T f32
//! ```
//!
//! Samples are kept as `f32` on disk and widened to `f64` in memory.

use std::path::Path;

use neurosleep_core::signal::EpochRecord;
use neurosleep_core::Stage;

use crate::error::{Error, Result};
use crate::io::Reader;

pub const MAGIC: &[u8; 4] = b"NSE1";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStore {
    pub channels: usize,
    pub samples_per_epoch: usize,
    pub epochs: Vec<EpochRecord>,
}

impl EpochStore {
    pub fn new(channels: usize, samples_per_epoch: usize, epochs: Vec<EpochRecord>) -> Result<Self> {
        let store = Self {
            channels,
            samples_per_epoch,
            epochs,
        };
        store.check()?;
        Ok(store)
    }

    fn check(&self) -> Result<()> {
        if self.channels == 0 || self.channels > usize::from(u16::MAX) {
            return Err(Error::Format(format!("channel count {} does not fit the store", self.channels)));
        }
        if u32::try_from(self.samples_per_epoch).is_err() || u32::try_from(self.epochs.len()).is_err() {
            return Err(Error::Format("epoch length or count exceeds 32 bits".into()));
        }
        for (i, e) in self.epochs.iter().enumerate() {
            if e.channels != self.channels || e.width() != self.samples_per_epoch {
                return Err(Error::Format(format!(
                    "epoch {i} ({} {}) is {} × {}, store holds {} × {}",
                    e.subject_id,
                    e.epoch_index,
                    e.channels,
                    e.width(),
                    self.channels,
                    self.samples_per_epoch
                )));
            }
            if e.subject_id.len() > usize::from(u16::MAX) {
                return Err(Error::Format(format!("epoch {i}: subject id longer than 65535 bytes")));
            }
        }
        Ok(())
    }

    /// Distinct subject ids in first-seen order.
    pub fn subjects(&self) -> Vec<String> {
        let mut seen = std::collections::BTreeSet::new();
        self.epochs
            .iter()
            .filter(|e| seen.insert(e.subject_id.as_str()))
            .map(|e| e.subject_id.clone())
            .collect()
    }

    pub fn class_counts(&self) -> [usize; Stage::COUNT] {
        let mut c = [0; Stage::COUNT];
        for e in &self.epochs {
            c[e.label.index()] += 1;
        }
        c
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.check()?;
        let per = self.channels * self.samples_per_epoch * 4;
        let mut out = Vec::with_capacity(16 + self.epochs.len() * (per + 32));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.channels as u16).to_le_bytes());
        out.extend_from_slice(&(self.samples_per_epoch as u32).to_le_bytes());
        out.extend_from_slice(&(self.epochs.len() as u32).to_le_bytes());
        for e in &self.epochs {
            out.extend_from_slice(&(e.subject_id.len() as u16).to_le_bytes());
            out.extend_from_slice(e.subject_id.as_bytes());
            out.extend_from_slice(&e.epoch_index.to_le_bytes());
            out.push(e.label.index() as u8);
            for &v in &e.samples {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "epoch store");
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not an epoch store (bad magic, expected NSE1)".into()));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::Format(format!("epoch store version {version} is not supported (expected {VERSION})")));
        }
        let channels = usize::from(r.u16()?);
        let width = r.u32()? as usize;
        let count = r.u32()? as usize;
        let mut epochs = Vec::with_capacity(count.min(1 << 20));
        for i in 0..count {
            let len = usize::from(r.u16()?);
            let id = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Format(format!("epoch {i}: subject id is not UTF-8")))?
                .to_string();
            let epoch_index = r.u32()?;
            let raw = r.u8()?;
            let label = Stage::from_index(usize::from(raw))
                .ok_or_else(|| Error::Format(format!("epoch {i}: label {raw} is not a stage")))?;
            let samples = r
                .take(channels * width * 4)?
                .chunks_exact(4)
                .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
                .collect();
            epochs.push(EpochRecord {
                subject_id: id,
                epoch_index,
                label,
                channels,
                samples,
            });
        }
        r.finish()?;
        Ok(Self {
            channels,
            samples_per_epoch: width,
            epochs,
        })
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

    fn epoch(id: &str, i: u32, label: Stage, samples: Vec<f64>) -> EpochRecord {
        EpochRecord {
            subject_id: id.into(),
            epoch_index: i,
            label,
            channels: 2,
            samples,
        }
    }

    #[test]
    fn empty_store_round_trips() {
        let s = EpochStore::new(2, 3000, vec![]).unwrap();
        let b = s.to_bytes().unwrap();
        assert_eq!(b.len(), 16);
        assert_eq!(EpochStore::from_bytes(&b).unwrap(), s);
    }

    #[test]
    fn f32_values_round_trip_exactly() {
        let s = EpochStore::new(
            2,
            2,
            vec![
                epoch("a", 0, Stage::N2, vec![0.5, -1.25, 3.0, f64::from(0.1f32)]),
                epoch("ü", 7, Stage::R, vec![0.0; 4]),
            ],
        )
        .unwrap();
        let b = s.to_bytes().unwrap();
        let back = EpochStore::from_bytes(&b).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_bytes().unwrap(), b);
        assert_eq!(back.subjects(), vec!["a".to_string(), "ü".into()]);
    }

    #[test]
    fn rejects_corruption() {
        let s = EpochStore::new(2, 2, vec![epoch("a", 0, Stage::W, vec![1.0; 4])]).unwrap();
        let mut b = s.to_bytes().unwrap();
        assert!(EpochStore::from_bytes(&b[..b.len() - 1]).is_err());
        let mut long = b.clone();
        long.push(0);
        assert!(EpochStore::from_bytes(&long).is_err());
        b[0] = b'X';
        assert!(EpochStore::from_bytes(&b).unwrap_err().to_string().contains("magic"));
    }

    #[test]
    fn rejects_mismatched_epochs() {
        assert!(EpochStore::new(2, 3, vec![epoch("a", 0, Stage::W, vec![1.0; 4])]).is_err());
    }
}
