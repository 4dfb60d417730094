//! Versioned JSON parameter checkpoints.
//!
//! A checkpoint is a flat map of parameter name to tensor plus a small
//! header: format version, config hash, seed, epoch, and the validation
//! score the checkpoint was selected on. Serialization is canonical
//! (BTreeMap ordering, compact JSON, trailing newline) so identical runs
//! produce byte-identical files.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    /// Hex SHA-256 of the canonical training config JSON.
    pub config_hash: String,
    pub seed: u64,
    pub epoch: usize,
    /// Validation EM@1 at selection time; absent for untrained dumps.
    pub val_em1: Option<f64>,
    pub params: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new(params: BTreeMap<String, Tensor>) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            config_hash: String::new(),
            seed: 0,
            epoch: 0,
            val_em1: None,
            params,
        }
    }

    fn validate(&self, path: &Path) -> Result<()> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: None,
                message: format!(
                    "unsupported checkpoint version {} (expected {})",
                    self.format_version, CHECKPOINT_VERSION
                ),
            });
        }
        for (name, t) in &self.params {
            let numel: usize = t.shape().iter().product();
            if numel != t.numel() {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: None,
                    message: format!(
                        "parameter {name:?} has shape {:?} but {} values",
                        t.shape(),
                        t.numel()
                    ),
                });
            }
            if !t.all_finite() {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: None,
                    message: format!("parameter {name:?} contains non-finite values"),
                });
            }
        }
        Ok(())
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let mut body = serde_json::to_string(ckpt)
        .map_err(|e| Error::Config(format!("checkpoint serialization failed: {e}")))?;
    body.push('\n');
    std::fs::write(path, body).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let body =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let ckpt: Checkpoint = serde_json::from_str(&body).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: None,
        message: e.to_string(),
    })?;
    ckpt.validate(path)?;
    Ok(ckpt)
}
