use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

use super::{ModelConfig, ModelParams, ModelState};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// How parameter gradients of the force term are obtained: the force
/// backward pass is itself differentiated.
pub const FORCE_LOSS_GRADIENT: &str = "reverse-over-reverse";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct StoredTensor {
    shape: [usize; 2],
    data: Vec<f64>,
}

/// JSON document holding a model: configuration, every parameter array with
/// its shape, and free-form metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub force_loss_gradient: String,
    pub config: ModelConfig,
    parameters: BTreeMap<String, StoredTensor>,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl Checkpoint {
    pub fn from_state(state: &ModelState) -> Self {
        let parameters = state
            .params
            .named()
            .into_iter()
            .map(|(name, t)| {
                (
                    name,
                    StoredTensor {
                        shape: [t.rows(), t.cols()],
                        data: t.data().to_vec(),
                    },
                )
            })
            .collect();
        Self {
            format_version: CHECKPOINT_VERSION,
            force_loss_gradient: FORCE_LOSS_GRADIENT.to_string(),
            config: state.config.clone(),
            parameters,
            metadata: BTreeMap::new(),
        }
    }

    pub fn to_state(&self) -> Result<ModelState> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint format version {}",
                self.format_version
            )));
        }
        self.config
            .validate()
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut state = ModelState {
            config: self.config.clone(),
            params: ModelParams::zeros(&self.config),
        };
        let mut seen = 0;
        for (name, slot) in state.params.named_mut() {
            let stored = self
                .parameters
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("parameter {name} is missing")))?;
            let [r, c] = stored.shape;
            if (r, c) != slot.shape() || stored.data.len() != r * c {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {:?} with {} values, expected {:?}",
                    stored.shape,
                    stored.data.len(),
                    slot.shape()
                )));
            }
            *slot = Tensor::from_vec(r, c, stored.data.clone());
            seen += 1;
        }
        if seen != self.parameters.len() {
            let known: Vec<String> = state.params.named().into_iter().map(|(n, _)| n).collect();
            let extra: Vec<&String> = self.parameters.keys().filter(|k| !known.contains(k)).collect();
            return Err(Error::Checkpoint(format!("unknown parameters {extra:?}")));
        }
        state.check()?;
        Ok(state)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl ModelState {
    pub fn save(&self, path: &Path) -> Result<()> {
        Checkpoint::from_state(self).save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::load(path)?.to_state()
    }
}
