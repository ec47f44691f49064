//! Versioned, self-describing JSON checkpoints.
//!
//! A checkpoint stores, for each member model, the full configuration and
//! schema, every named tensor (normalization running statistics included)
//! and optionally the optimizer and random-stream state needed to resume.
//! Floats are written in shortest round-trip form, so loading is bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::FeatureSchema;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::training::TrainState;

use super::{AdiModel, ModelConfig};

pub const CHECKPOINT_FORMAT: &str = "adi-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberState {
    pub config: ModelConfig,
    pub schema: FeatureSchema,
    pub params: Vec<NamedTensor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainState>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub members: Vec<MemberState>,
}

impl MemberState {
    pub fn capture(model: &AdiModel, training: Option<TrainState>) -> Self {
        MemberState {
            config: model.config.clone(),
            schema: model.schema.clone(),
            params: model
                .store
                .entries()
                .iter()
                .map(|e| NamedTensor {
                    name: e.name.clone(),
                    shape: e.tensor.shape().to_vec(),
                    trainable: e.trainable,
                    values: e.tensor.data().to_vec(),
                })
                .collect(),
            training,
        }
    }

    /// Rebuilds the model structure from the stored config and overwrites
    /// every parameter by name.
    pub fn restore(&self) -> Result<AdiModel> {
        let mut model = AdiModel::build(&self.config, &self.schema)?;
        if model.store.len() != self.params.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} tensors, the configured model has {}",
                self.params.len(),
                model.store.len()
            )));
        }
        for p in &self.params {
            let id = model.store.find(&p.name).ok_or_else(|| {
                Error::Config(format!(
                    "checkpoint tensor `{}` is not part of the model",
                    p.name
                ))
            })?;
            if model.store.is_trainable(id) != p.trainable {
                return Err(Error::Config(format!(
                    "tensor `{}` changed trainability",
                    p.name
                )));
            }
            model
                .store
                .set(id, Tensor::new(p.shape.clone(), p.values.clone())?)?;
        }
        Ok(model)
    }
}

impl Checkpoint {
    pub fn new(members: Vec<MemberState>) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            members,
        }
    }

    pub fn single(model: &AdiModel, training: Option<TrainState>) -> Self {
        Checkpoint::new(vec![MemberState::capture(model, training)])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text)?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!(
                "not a checkpoint (format `{}`)",
                ckpt.format
            )));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        if ckpt.members.is_empty() {
            return Err(Error::Config("checkpoint holds no models".into()));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::from_json(&fs::read_to_string(path)?)
    }
}
