//! Pretrained backbone weights.
//!
//! Weights live in a local directory as `<id>.safetensors` files, converted
//! from the published torchvision checkpoints by
//! `scripts/fetch_weights.py`. A `weights.lock.json` next to them records,
//! per backbone, the file's sha256 and the upstream checkpoint it came from;
//! both are verified before any tensor is read.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{random_backbone, Backbone, BackboneId};
use crate::error::{Error, Result};
use crate::nn::{load_state, Tensor};

pub const WEIGHTS_DIR_ENV: &str = "MRIBENCH_WEIGHTS_DIR";
pub const LOCK_FILE: &str = "weights.lock.json";

/// The upstream ImageNet checkpoint each backbone must be converted from.
pub fn upstream_source(id: BackboneId) -> &'static str {
    match id {
        BackboneId::MobilenetV2 => "https://download.pytorch.org/models/mobilenet_v2-b0353104.pth",
        BackboneId::Resnet18 => "https://download.pytorch.org/models/resnet18-f37072fd.pth",
        BackboneId::EfficientnetB0 => "https://download.pytorch.org/models/efficientnet_b0_rwightman-7f5810bc.pth",
        BackboneId::Vgg16 => "https://download.pytorch.org/models/vgg16-397923af.pth",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LockEntry {
    pub file: String,
    pub sha256: String,
    pub source: String,
}

#[derive(Debug, Clone)]
pub struct WeightsStore {
    dir: PathBuf,
}

impl WeightsStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        WeightsStore { dir: dir.into() }
    }

    /// `$MRIBENCH_WEIGHTS_DIR`, else `~/.cache/mribench/weights`.
    pub fn from_env() -> Self {
        if let Some(dir) = std::env::var_os(WEIGHTS_DIR_ENV).filter(|d| !d.is_empty()) {
            return WeightsStore::new(dir);
        }
        let home = std::env::var_os("HOME").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."));
        WeightsStore::new(home.join(".cache").join("mribench").join("weights"))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn hint(&self) -> String {
        format!(
            "run `python scripts/fetch_weights.py --out {}` or point {WEIGHTS_DIR_ENV} at a directory containing {LOCK_FILE}",
            self.dir.display()
        )
    }

    pub fn read_lock(&self) -> Result<BTreeMap<String, LockEntry>> {
        let path = self.dir.join(LOCK_FILE);
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::Weights(format!("cannot read {}: {e}; {}", path.display(), self.hint())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Weights(format!("malformed {}: {e}; {}", path.display(), self.hint())))
    }

    /// The verified tensors of one backbone.
    pub fn load(&self, id: BackboneId) -> Result<HashMap<String, Tensor>> {
        let lock = self.read_lock()?;
        let entry = lock
            .get(id.name())
            .ok_or_else(|| Error::Weights(format!("{LOCK_FILE} has no entry for {id}; {}", self.hint())))?;
        if entry.source != upstream_source(id) {
            return Err(Error::Weights(format!(
                "{id} weights were converted from {}, expected {}; {}",
                entry.source,
                upstream_source(id),
                self.hint()
            )));
        }
        let path = self.dir.join(&entry.file);
        let bytes = fs::read(&path)
            .map_err(|e| Error::Weights(format!("cannot read {}: {e}; {}", path.display(), self.hint())))?;
        let digest = hex::encode(Sha256::digest(&bytes));
        if !digest.eq_ignore_ascii_case(&entry.sha256) {
            return Err(Error::Weights(format!(
                "checksum mismatch for {}: got {digest}, lock says {}; the file is corrupt, {}",
                path.display(),
                entry.sha256,
                self.hint()
            )));
        }
        decode_tensors(&bytes).map_err(|e| Error::Weights(format!("{}: {e}", path.display())))
    }
}

/// Backbone (with its original classifier) initialized from the verified
/// pretrained weights.
pub fn load_pretrained_backbone(id: BackboneId, store: &WeightsStore) -> Result<Backbone> {
    let tensors = store.load(id)?;
    let mut backbone = random_backbone(id, 0);
    let extra = load_state(&mut backbone, &tensors).map_err(|e| Error::Weights(format!("{id}: {e}")))?;
    if !extra.is_empty() {
        log::warn!("{id}: ignored {} unmatched tensors (first: {})", extra.len(), extra[0]);
    }
    Ok(backbone)
}

pub fn decode_tensors(bytes: &[u8]) -> std::result::Result<HashMap<String, Tensor>, String> {
    let st = SafeTensors::deserialize(bytes).map_err(|e| format!("not a safetensors archive: {e}"))?;
    let mut out = HashMap::new();
    for (name, view) in st.tensors() {
        if view.dtype() != Dtype::F32 {
            return Err(format!("tensor {name} has dtype {:?}, expected F32", view.dtype()));
        }
        let data: Vec<f32> = view
            .data()
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let shape = view.shape().to_vec();
        let t = Tensor::from_vec(&shape, data).map_err(|e| e.to_string())?;
        out.insert(name, t);
    }
    Ok(out)
}

pub fn encode_tensors(
    tensors: &[(String, Tensor)],
    metadata: Option<HashMap<String, String>>,
) -> std::result::Result<Vec<u8>, String> {
    let bytes: Vec<(String, Vec<usize>, Vec<u8>)> = tensors
        .iter()
        .map(|(n, t)| {
            let b = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
            (n.clone(), t.shape().to_vec(), b)
        })
        .collect();
    let mut views = Vec::with_capacity(bytes.len());
    for (name, shape, data) in &bytes {
        let view = TensorView::new(Dtype::F32, shape.clone(), data).map_err(|e| e.to_string())?;
        views.push((name.as_str(), view));
    }
    safetensors::serialize(views, &metadata).map_err(|e| e.to_string())
}
