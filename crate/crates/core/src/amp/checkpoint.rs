use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::AdaptiveModel;
use crate::error::{AmpError, Result};

pub const CHECKPOINT_FORMAT: &str = "amp-checkpoint/1";

/// Model snapshot. Parameter arrays are stored as base64 little-endian
/// `f64`, so a round trip is bit-exact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    /// Epoch the snapshot was taken after (0 = before training).
    pub epoch: usize,
    /// Master seed; every per-epoch shuffle stream is derived from it.
    pub seed: u64,
    /// Free-form run configuration supplied by the caller.
    pub run_config: serde_json::Value,
    pub model: AdaptiveModel,
}

impl Checkpoint {
    pub fn new(model: AdaptiveModel, epoch: usize, run_config: serde_json::Value) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            epoch,
            seed: model.config.seed,
            run_config,
            model,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        ck.check_format()?;
        Ok(ck)
    }

    fn check_format(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(AmpError::Checkpoint(format!(
                "unsupported format tag {:?} (expected {CHECKPOINT_FORMAT:?})",
                self.format
            )));
        }
        let l = self.model.depth.support();
        if self.model.blocks.len() < l {
            return Err(AmpError::Checkpoint(format!(
                "{} layers stored for a support of {l}",
                self.model.blocks.len()
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        ck.check_format()?;
        Ok(ck)
    }
}
