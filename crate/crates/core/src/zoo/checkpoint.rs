//! Best-model checkpoints: `<model_id>-best.ckpt` (a safetensors archive of
//! every parameter and buffer) with a `<model_id>-best.json` sidecar.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::weights::{decode_tensors, encode_tensors};
use crate::error::{Error, Result};
use crate::nn::{load_state, state_dict, Layer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model_id: String,
    pub epoch: usize,
    pub val_accuracy: f64,
    pub config_hash: String,
}

pub fn checkpoint_path(dir: &Path, model_id: &str) -> PathBuf {
    dir.join(format!("{model_id}-best.ckpt"))
}

pub fn sidecar_path(ckpt: &Path) -> PathBuf {
    ckpt.with_extension("json")
}

pub fn save_checkpoint(model: &dyn Layer, dir: &Path, meta: &CheckpointMeta) -> Result<PathBuf> {
    let path = checkpoint_path(dir, &meta.model_id);
    let info = HashMap::from([("model_id".to_string(), meta.model_id.clone())]);
    let bytes = encode_tensors(&state_dict(model), Some(info)).map_err(Error::Checkpoint)?;
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    let side = sidecar_path(&path);
    let json = serde_json::to_string_pretty(meta).expect("plain struct");
    fs::write(&side, json + "\n").map_err(|e| Error::io(&side, e))?;
    Ok(path)
}

/// Restores `model` from a checkpoint; returns the sidecar metadata.
pub fn load_checkpoint(model: &mut dyn Layer, path: &Path) -> Result<CheckpointMeta> {
    let bytes = fs::read(path).map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    let tensors = decode_tensors(&bytes).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side)
        .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", side.display())))?;
    let meta: CheckpointMeta = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("malformed {}: {e}", side.display())))?;
    let extra =
        load_state(model, &tensors).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if let Some(name) = extra.first() {
        return Err(Error::Checkpoint(format!(
            "{}: tensor {name} does not belong to a {} model",
            path.display(),
            meta.model_id
        )));
    }
    Ok(meta)
}
