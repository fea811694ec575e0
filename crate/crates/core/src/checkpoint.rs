//! Model checkpoints: a tensor archive whose metadata echoes the config.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::dump;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub version: u32,
    pub model: ModelConfig,
    pub step: u64,
    /// Free-form record of how the weights were produced.
    pub run: serde_json::Value,
}

pub fn save(model: &Model, dir: &Path, step: u64, run: serde_json::Value) -> Result<()> {
    let meta = CheckpointMeta { version: CHECKPOINT_VERSION, model: model.config.clone(), step, run };
    let params = model.named_params();
    dump::write_archive(
        dir,
        params.iter().map(|(n, t)| (n.as_str(), t.shape(), t.data())),
        serde_json::to_value(&meta)?,
    )
}

pub fn load(dir: &Path) -> Result<(Model, CheckpointMeta)> {
    let arch = dump::read_archive(dir)?;
    let meta: CheckpointMeta = serde_json::from_value(arch.meta.clone())?;
    if meta.version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {}", meta.version)));
    }
    // weights are overwritten below; the init stream is irrelevant
    let mut model = Model::new(meta.model.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
    let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    let mut values = Vec::with_capacity(names.len());
    for n in &names {
        let t = arch.get(n).ok_or_else(|| Error::Format(format!("checkpoint lacks parameter {n}")))?;
        values.push(t.clone());
    }
    if arch.tensors.len() != names.len() {
        return Err(Error::Format(format!(
            "checkpoint holds {} tensors, model has {}",
            arch.tensors.len(),
            names.len()
        )));
    }
    model.set_params(values)?;
    Ok((model, meta))
}
