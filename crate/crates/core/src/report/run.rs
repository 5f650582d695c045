//! Run directories: `runs/<model_id>-<hash prefix>/` holding the resolved
//! config, curves CSV, best checkpoint and a `run.json` record.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{config_hash, RunConfig};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;

pub const RUN_FILE: &str = "run.json";
pub const CONFIG_FILE: &str = "config.resolved";
pub const CURVES_FILE: &str = "curves.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const LOCK_FILE: &str = "train.lock";

/// Hex digits of the config hash used in directory names.
pub const HASH_PREFIX: usize = 12;

pub fn run_dir_name(model_id: &str, hash: &str) -> String {
    format!("{model_id}-{}", &hash[..HASH_PREFIX.min(hash.len())])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub model_id: String,
    pub config_hash: String,
    /// Paths relative to the run directory.
    pub config_file: String,
    pub history_file: String,
    pub checkpoint: String,
    pub best_epoch: usize,
    pub epochs_trained: usize,
    pub stopped_early: bool,
    pub optimizer: String,
    pub batch_size: usize,
    pub seed: u64,
    pub weights: String,
    pub metrics: Option<MetricsReport>,
}

impl RunRecord {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(RUN_FILE);
        let json = serde_json::to_string_pretty(self).expect("plain struct");
        fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
    }

    /// Loads `run.json` and checks the stored hash against the resolved
    /// config file in the same directory.
    pub fn load(dir: &Path) -> Result<RunRecord> {
        let path = dir.join(RUN_FILE);
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::Data(format!("{} is not a run directory: {e}", dir.display())))?;
        let record: RunRecord =
            serde_json::from_str(&text).map_err(|e| Error::Data(format!("malformed {}: {e}", path.display())))?;
        let config_text = record.config_text(dir)?;
        let actual = config_hash(&config_text);
        if actual != record.config_hash {
            return Err(Error::Data(format!(
                "config hash mismatch in {}: run.json says {}, {} hashes to {actual}",
                dir.display(),
                record.config_hash,
                record.config_file
            )));
        }
        Ok(record)
    }

    fn config_text(&self, dir: &Path) -> Result<String> {
        let path = dir.join(&self.config_file);
        fs::read_to_string(&path).map_err(|e| Error::io(&path, e))
    }

    pub fn config(&self, dir: &Path) -> Result<RunConfig> {
        RunConfig::parse(&self.config_text(dir)?, &dir.join(&self.config_file))
    }

    pub fn history_path(&self, dir: &Path) -> PathBuf {
        dir.join(&self.history_file)
    }

    pub fn checkpoint_path(&self, dir: &Path) -> PathBuf {
        dir.join(&self.checkpoint)
    }
}

/// Exclusive claim on a run directory; released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<RunLock> {
        let path = dir.join(LOCK_FILE);
        let mut file = OpenOptions::new().write(true).create_new(true).open(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                Error::Runtime(format!(
                    "{} is locked by another training process (remove {} if it is stale)",
                    dir.display(),
                    path.display()
                ))
            } else {
                Error::io(&path, e)
            }
        })?;
        let _ = writeln!(file, "{}", std::process::id());
        Ok(RunLock { path })
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
