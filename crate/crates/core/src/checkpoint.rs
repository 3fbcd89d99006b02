//! JSON checkpoints of model parameters.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::ModelParams;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    /// [`TrainConfig::hash`] of the config the parameters were trained with.
    pub config_hash: String,
    pub params: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(config: &TrainConfig, params: &ModelParams) -> Self {
        Checkpoint {
            format_version: FORMAT_VERSION,
            config_hash: config.hash(),
            params: params
                .names
                .iter()
                .zip(&params.values)
                .map(|(name, t)| NamedTensor {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|source| Error::Json {
            file: path.display().to_string(),
            source,
        })?;
        if ck.format_version != FORMAT_VERSION {
            return Err(Error::Validation(format!(
                "checkpoint format {} is not supported (expected {FORMAT_VERSION})",
                ck.format_version
            )));
        }
        Ok(ck)
    }

    /// Writes the stored tensors into `params`, which must come from the
    /// same config.
    pub fn restore(&self, config: &TrainConfig, params: &mut ModelParams) -> Result<()> {
        if self.config_hash != config.hash() {
            return Err(Error::Validation("checkpoint was written for a different config".into()));
        }
        let named = self
            .params
            .iter()
            .map(|p| Ok((p.name.clone(), Tensor::new(p.shape.clone(), p.data.clone())?)))
            .collect::<Result<Vec<_>>>()?;
        params.assign(&named)
    }
}
