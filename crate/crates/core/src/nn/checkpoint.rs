//! JSON checkpoint of named tensors plus model configuration.

use super::{layers::DT_UNIT_SECONDS, NnError, ParamStore, Result, Tensor};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub const CHECKPOINT_FORMAT: &str = "qsuggest-model";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub precision: String,
    pub dt_unit_seconds: f64,
    /// Model-specific configuration, opaque at this level.
    pub config: serde_json::Value,
    pub epsilon: f64,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn capture(store: &ParamStore, config: serde_json::Value, epsilon: f64) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            precision: "f64".into(),
            dt_unit_seconds: DT_UNIT_SECONDS,
            config,
            epsilon,
            tensors: store
                .ids()
                .map(|id| NamedTensor {
                    name: store.name(id).to_string(),
                    tensor: store.get(id).clone(),
                })
                .collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        fs::write(path, text).map_err(|source| NnError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| NnError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let ck: Checkpoint =
            serde_json::from_str(&text).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        if ck.dt_unit_seconds != DT_UNIT_SECONDS {
            return Err(NnError::Checkpoint(format!(
                "checkpoint uses a {}s time unit, expected {}s",
                ck.dt_unit_seconds, DT_UNIT_SECONDS
            )));
        }
        for nt in &ck.tensors {
            // re-validate: deserialization bypasses the constructor
            Tensor::new(nt.tensor.shape().to_vec(), nt.tensor.data().to_vec())?;
        }
        Ok(ck)
    }

    /// Copies every tensor into `store`, which must have exactly the same names and shapes.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<()> {
        if self.tensors.len() != store.len() {
            return Err(NnError::Checkpoint(format!(
                "checkpoint has {} tensors, model has {}",
                self.tensors.len(),
                store.len()
            )));
        }
        for nt in &self.tensors {
            let id = store
                .id(&nt.name)
                .ok_or_else(|| NnError::Checkpoint(format!("unknown tensor {}", nt.name)))?;
            if store.get(id).shape() != nt.tensor.shape() {
                return Err(NnError::ShapeMismatch {
                    expected: store.get(id).shape().to_vec(),
                    got: nt.tensor.shape().to_vec(),
                });
            }
        }
        for nt in &self.tensors {
            let id = store.id(&nt.name).expect("checked above");
            *store.get_mut(id) = nt.tensor.clone();
        }
        store.project();
        Ok(())
    }
}
