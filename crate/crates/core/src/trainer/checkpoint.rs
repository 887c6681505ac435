use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::TrainerState;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Identifies the training rows a checkpoint was taken on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataFingerprint {
    pub n_rows: usize,
    pub n_features: usize,
    /// FNV-1a over the IEEE bit patterns, row-major.
    pub hash: u64,
}

impl DataFingerprint {
    pub fn of(x: &Array2<f64>) -> Self {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in x.iter() {
            for b in v.to_bits().to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        Self {
            n_rows: x.nrows(),
            n_features: x.ncols(),
            hash: h,
        }
    }
}

/// Serialized trainer state. Floats round-trip exactly through JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub data: DataFingerprint,
    pub state: TrainerState,
}

impl Checkpoint {
    pub fn new(x: &Array2<f64>, state: TrainerState) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            data: DataFingerprint::of(x),
            state,
        }
    }

    pub fn check(&self, x: &Array2<f64>) -> Result<()> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        if self.data != DataFingerprint::of(x) {
            return Err(Error::State("checkpoint was taken on different training rows".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Write atomically via a sibling temporary file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_json()?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
