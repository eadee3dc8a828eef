use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Arch, KernelBank, Ranker, RankerConfig};
use crate::error::{Error, Result};
use crate::io::{read_to_string, write_atomic};
use crate::numeric::ParamSet;

pub const CHECKPOINT_FORMAT: &str = "qbe-ranker";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A trained ranker snapshot as written to disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub ranker: Ranker,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    arch: Arch,
    kernels: KernelBank,
    config: RankerConfig,
    dim: usize,
    epoch: usize,
    train_loss: f64,
    val_loss: Option<f64>,
    params: ParamSet,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            arch: self.ranker.config.arch,
            kernels: self.ranker.config.kernels.clone(),
            config: self.ranker.config.clone(),
            dim: self.ranker.dim,
            epoch: self.epoch,
            train_loss: self.train_loss,
            val_loss: self.val_loss,
            params: self.ranker.params.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: CheckpointFile = serde_json::from_str(text)?;
        if f.format != CHECKPOINT_FORMAT || f.version != CHECKPOINT_VERSION {
            return Err(Error::Contract(format!("unsupported checkpoint {} v{}", f.format, f.version)));
        }
        if f.arch != f.config.arch || f.kernels != f.config.kernels {
            return Err(Error::Contract("checkpoint header disagrees with its config".into()));
        }
        f.config.validate()?;
        f.params.validate()?;
        Ok(Checkpoint {
            epoch: f.epoch,
            train_loss: f.train_loss,
            val_loss: f.val_loss,
            ranker: Ranker {
                config: f.config,
                dim: f.dim,
                params: f.params,
            },
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_json()?.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&read_to_string(path.as_ref())?)
    }
}
