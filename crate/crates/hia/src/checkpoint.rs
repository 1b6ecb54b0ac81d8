//! Checkpoint JSON: model configuration, training metadata and every
//! parameter as a shape plus row-major data.

use std::collections::BTreeMap;
use std::path::Path;

use hia_core::model::{Hia, ModelConfig, ParamStore};
use hia_core::train::Checkpoint;
use hia_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{HiaError, Result};
use crate::files;

const FORMAT: &str = "hia-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamEntry {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format: String,
    version: u32,
    config: ModelConfig,
    epoch: usize,
    best_metric: f64,
    params: BTreeMap<String, ParamEntry>,
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let params = ckpt
        .model
        .params
        .iter()
        .map(|(k, t)| (k.clone(), ParamEntry { shape: t.shape().to_vec(), data: t.data().to_vec() }))
        .collect();
    let file = CheckpointFile {
        format: FORMAT.into(),
        version: VERSION,
        config: ckpt.model.config.clone(),
        epoch: ckpt.epoch,
        best_metric: ckpt.best_metric,
        params,
    };
    files::write_json(path, &file)
}

/// Loads a checkpoint and checks every parameter shape against its config.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file: CheckpointFile = files::read_json(path)?;
    if file.format != FORMAT || file.version != VERSION {
        return Err(HiaError::parse(
            path,
            format!("expected {FORMAT} version {VERSION}, found {} version {}", file.format, file.version),
        ));
    }
    let mut params = ParamStore::new();
    for (name, entry) in file.params {
        let t = Tensor::new(&entry.shape, entry.data)
            .map_err(|e| HiaError::parse(path, format!("parameter {name}: {e}")))?;
        params.insert(name, t);
    }
    let model = Hia::from_params(file.config, params).map_err(|e| HiaError::data(path, e))?;
    Ok(Checkpoint { model, epoch: file.epoch, best_metric: file.best_metric })
}
