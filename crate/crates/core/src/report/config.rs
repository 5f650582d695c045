//! Run configuration files: flat `key = value` lines or a JSON object.
//!
//! Every key has a default. The resolved configuration is rendered in a
//! canonical form (sorted keys, one per line) whose sha256 is the run's
//! config hash.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::augment::PreprocessConfig;
use crate::error::{Error, Result};
use crate::nn::optim::OptimizerKind;
use crate::nn::ActivationKind;
use crate::train::TrainConfig;
use crate::zoo::{ModelKind, WeightSource, WeightsStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightsChoice {
    Pretrained,
    Random,
}

impl WeightsChoice {
    pub fn name(self) -> &'static str {
        match self {
            WeightsChoice::Pretrained => "pretrained",
            WeightsChoice::Random => "random",
        }
    }

    pub fn source(self) -> WeightSource {
        match self {
            WeightsChoice::Pretrained => WeightSource::Pretrained(WeightsStore::from_env()),
            WeightsChoice::Random => WeightSource::Random,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: Option<ModelKind>,
    /// Split CSV; relative paths resolve against the config file directory.
    pub manifest: PathBuf,
    pub runs_dir: PathBuf,
    pub weights: WeightsChoice,
    pub head_activation: Option<ActivationKind>,
    pub train: TrainConfig,
    pub preprocess: PreprocessConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: None,
            manifest: PathBuf::from("splits.csv"),
            runs_dir: PathBuf::from("runs"),
            weights: WeightsChoice::Pretrained,
            head_activation: Some(ActivationKind::Relu),
            train: TrainConfig::default(),
            preprocess: PreprocessConfig::default(),
        }
    }
}

pub const KEYS: [&str; 18] = [
    "base_lr",
    "batch_size",
    "flip_prob",
    "head_activation",
    "lr_gamma",
    "lr_step",
    "manifest",
    "max_epochs",
    "mean",
    "model",
    "optimizer",
    "patience",
    "rotation_degrees",
    "runs_dir",
    "seed",
    "std",
    "target_size",
    "weights",
];

fn raw_pairs(text: &str, path: &Path) -> Result<Vec<(usize, String, String)>> {
    if text.trim_start().starts_with('{') {
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), e.line())))?;
        let obj = value.as_object().ok_or_else(|| Error::Config("config JSON must be an object".into()))?;
        return obj
            .iter()
            .map(|(k, v)| {
                let s = match v {
                    serde_json::Value::String(s) => s.clone(),
                    serde_json::Value::Number(n) => n.to_string(),
                    serde_json::Value::Bool(b) => b.to_string(),
                    serde_json::Value::Null => "none".to_string(),
                    serde_json::Value::Array(items) => items
                        .iter()
                        .map(|i| i.as_str().map(str::to_string).unwrap_or_else(|| i.to_string()))
                        .collect::<Vec<_>>()
                        .join(","),
                    serde_json::Value::Object(_) => {
                        return Err(Error::Config(format!("config key {k:?} must be a scalar or list")))
                    }
                };
                Ok((0, k.clone(), s))
            })
            .collect();
    }
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("{}:{}: expected `key = value`", path.display(), i + 1)))?;
        let v = v.trim().trim_matches('"');
        out.push((i + 1, k.trim().to_string(), v.to_string()));
    }
    Ok(out)
}

fn parse_triple(key: &str, v: &str) -> Result<[f32; 3]> {
    let parts: Vec<&str> = v.trim_matches(['[', ']']).split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!("{key} needs three comma-separated values, got {v:?}")));
    }
    let mut out = [0.0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.parse().map_err(|_| Error::Config(format!("{key}: {p:?} is not a number")))?;
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: {v:?} is not a valid value")))
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = BTreeMap::new();
        for (line, key, v) in raw_pairs(text, path)? {
            if seen.insert(key.clone(), line).is_some() {
                return Err(Error::Config(format!("duplicate config key {key:?}")));
            }
            let v = v.as_str();
            match key.as_str() {
                "base_lr" => cfg.train.base_lr = num(&key, v)?,
                "batch_size" => cfg.train.batch_size = num(&key, v)?,
                "lr_gamma" => cfg.train.lr_gamma = num(&key, v)?,
                "lr_step" => cfg.train.lr_step = num(&key, v)?,
                "max_epochs" => cfg.train.max_epochs = num(&key, v)?,
                "patience" => cfg.train.patience = num(&key, v)?,
                "seed" => cfg.train.seed = num(&key, v)?,
                "optimizer" => cfg.train.optimizer = v.parse::<OptimizerKind>()?,
                "flip_prob" => cfg.preprocess.flip_prob = num(&key, v)?,
                "rotation_degrees" => cfg.preprocess.rotation_degrees = num(&key, v)?,
                "target_size" => cfg.preprocess.target_size = num(&key, v)?,
                "mean" => cfg.preprocess.mean = parse_triple(&key, v)?,
                "std" => cfg.preprocess.std = parse_triple(&key, v)?,
                "model" => cfg.model = if v == "none" { None } else { Some(v.parse()?) },
                "manifest" => cfg.manifest = PathBuf::from(v),
                "runs_dir" => cfg.runs_dir = PathBuf::from(v),
                "weights" => {
                    cfg.weights = match v {
                        "pretrained" => WeightsChoice::Pretrained,
                        "random" => WeightsChoice::Random,
                        _ => return Err(Error::Config(format!("weights must be pretrained or random, got {v:?}"))),
                    }
                }
                "head_activation" => {
                    cfg.head_activation = match v {
                        "none" => None,
                        "relu" => Some(ActivationKind::Relu),
                        "relu6" => Some(ActivationKind::Relu6),
                        "silu" => Some(ActivationKind::Silu),
                        _ => {
                            return Err(Error::Config(format!(
                                "head_activation must be relu, relu6, silu or none, got {v:?}"
                            )))
                        }
                    }
                }
                _ => {
                    return Err(Error::Config(format!(
                        "unknown config key {key:?} (valid: {})",
                        KEYS.join(", ")
                    )))
                }
            }
        }
        cfg.train.validate()?;
        cfg.preprocess.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        RunConfig::parse(&text, path)
    }

    /// Fixes the model, rejecting a conflicting `model` key.
    pub fn with_model(mut self, kind: ModelKind) -> Result<Self> {
        match self.model {
            Some(m) if m != kind => Err(Error::Config(format!(
                "config names model {m} but {kind} was requested"
            ))),
            _ => {
                self.model = Some(kind);
                Ok(self)
            }
        }
    }

    /// Makes `manifest` and `runs_dir` absolute, resolving relative paths
    /// against `base` (normally the config file's directory).
    pub fn resolve_paths(mut self, base: &Path) -> Result<Self> {
        for p in [&mut self.manifest, &mut self.runs_dir] {
            if p.is_relative() {
                let joined = base.join(&*p);
                *p = std::path::absolute(&joined).map_err(|e| Error::io(&joined, e))?;
            }
        }
        Ok(self)
    }

    /// Sorted `key = value` lines covering every key.
    pub fn canonical(&self) -> String {
        let t = &self.train;
        let p = &self.preprocess;
        let triple = |v: &[f32; 3]| v.map(|x| x.to_string()).join(",");
        let mut map = BTreeMap::new();
        map.insert("base_lr", t.base_lr.to_string());
        map.insert("batch_size", t.batch_size.to_string());
        map.insert("flip_prob", p.flip_prob.to_string());
        map.insert(
            "head_activation",
            match self.head_activation {
                None => "none".into(),
                Some(ActivationKind::Relu) => "relu".into(),
                Some(ActivationKind::Relu6) => "relu6".into(),
                Some(ActivationKind::Silu) => "silu".into(),
                Some(ActivationKind::Sigmoid) => "sigmoid".into(),
            },
        );
        map.insert("lr_gamma", t.lr_gamma.to_string());
        map.insert("lr_step", t.lr_step.to_string());
        map.insert("manifest", self.manifest.display().to_string());
        map.insert("max_epochs", t.max_epochs.to_string());
        map.insert("mean", triple(&p.mean));
        map.insert("model", self.model.map(|m| m.id().to_string()).unwrap_or_else(|| "none".into()));
        map.insert("optimizer", t.optimizer.name().to_string());
        map.insert("patience", t.patience.to_string());
        map.insert("rotation_degrees", p.rotation_degrees.to_string());
        map.insert("runs_dir", self.runs_dir.display().to_string());
        map.insert("seed", t.seed.to_string());
        map.insert("std", triple(&p.std));
        map.insert("target_size", p.target_size.to_string());
        map.insert("weights", self.weights.name().to_string());
        debug_assert_eq!(map.len(), KEYS.len());
        map.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn hash(&self) -> String {
        config_hash(&self.canonical())
    }
}

pub fn config_hash(canonical: &str) -> String {
    hex::encode(Sha256::digest(canonical.as_bytes()))
}
