//! JSON checkpoints of a trained network with its configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adam::AdamState;
use crate::error::{Error, Result};
use crate::experiment::ExperimentConfig;
use crate::model::NetworkParams;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: ExperimentConfig,
    pub network: NetworkParams,
    pub optimizer: Option<AdamState>,
    pub train_metric: f64,
    pub test_metric: f64,
}

impl Checkpoint {
    pub fn new(
        config: ExperimentConfig,
        network: NetworkParams,
        optimizer: Option<AdamState>,
        train_metric: f64,
        test_metric: f64,
    ) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            config,
            network,
            optimizer,
            train_metric,
            test_metric,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn from_json(s: &str, path: &Path) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(s).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        if ckpt.format_version != FORMAT_VERSION {
            return Err(Error::Format {
                path: path.to_path_buf(),
                msg: format!("unsupported checkpoint version {}", ckpt.format_version),
            });
        }
        if ckpt.network.dims().first() != ckpt.config.dims.first() {
            return Err(Error::Format {
                path: path.to_path_buf(),
                msg: "network input size disagrees with its configuration".into(),
            });
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s, path)
    }
}
