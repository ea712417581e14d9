//! Model checkpoints: one float64 TSMT file per named tensor plus a JSON
//! snapshot of the model configuration and normalization constants.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::tensor_file::{load_tensor, save_tensor, Precision};
use crate::data::Normalization;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::model::{Model, ModelConfig};

pub const CHECKPOINT_CONFIG: &str = "config.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub normalization: Normalization,
    pub parameter_count: usize,
    /// Held-out fold the model was trained without.
    pub held_out: usize,
    /// Optimizer updates applied.
    pub iterations: usize,
    pub tensors: Vec<String>,
}

pub fn save_checkpoint(
    dir: &Path,
    model: &Model,
    normalization: &Normalization,
    held_out: usize,
    iterations: usize,
) -> Result<()> {
    let store = model.store();
    let mut tensors = Vec::with_capacity(store.len());
    for id in store.ids() {
        let name = store.name(id).to_string();
        save_tensor(&dir.join(format!("{name}.tsmt")), store.value(id), Precision::F64)?;
        tensors.push(name);
    }
    let meta = CheckpointMeta {
        model: model.config().clone(),
        normalization: normalization.clone(),
        parameter_count: model.parameter_count(),
        held_out,
        iterations,
        tensors,
    };
    write_atomic(&dir.join(CHECKPOINT_CONFIG), serde_json::to_string_pretty(&meta)?.as_bytes())
}

pub fn load_checkpoint(dir: &Path) -> Result<(Model, CheckpointMeta)> {
    let config_path = dir.join(CHECKPOINT_CONFIG);
    let text = std::fs::read_to_string(&config_path)
        .map_err(|e| Error::Data(format!("cannot read checkpoint {}: {e}", config_path.display())))?;
    let meta: CheckpointMeta = serde_json::from_str(&text)?;
    let mut model = Model::new(meta.model.clone())?;
    let ids: Vec<_> = model.store().ids().collect();
    if ids.len() != meta.tensors.len() {
        return Err(Error::Format(format!(
            "checkpoint lists {} tensors, the {} model has {}",
            meta.tensors.len(),
            meta.model.variant,
            ids.len()
        )));
    }
    for id in ids {
        let name = model.store().name(id).to_string();
        let t = load_tensor(&dir.join(format!("{name}.tsmt")))?;
        let slot = model.store_mut().value_mut(id);
        if t.shape() != slot.shape() {
            return Err(Error::Format(format!(
                "checkpoint tensor {name} has shape {:?}, expected {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        *slot = t;
    }
    Ok((model, meta))
}
