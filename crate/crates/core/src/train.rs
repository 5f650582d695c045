//! Cross-entropy training with a step-decayed learning rate, strict
//! validation-accuracy early stopping and best-checkpoint restore.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::Pipeline;
use crate::data::SampleSource;
use crate::error::{Error, Result};
use crate::metrics::{accuracy, confusion, load_batch, mean_cross_entropy, predict, argmax};
use crate::nn::loss::cross_entropy;
use crate::nn::optim::{Optimizer, OptimizerKind};
use crate::nn::{load_state, state_dict, zero_grad, Ctx, Mode, Tensor};
use crate::rng::{stream_rng, Stream};
use crate::zoo::{save_checkpoint, CheckpointMeta, Network};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub base_lr: f64,
    /// Epochs between learning-rate decays.
    pub lr_step: usize,
    pub lr_gamma: f64,
    /// Epochs without strict val-accuracy improvement before stopping.
    pub patience: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 0.001,
            lr_step: 8,
            lr_gamma: 0.1,
            patience: 8,
            batch_size: 32,
            max_epochs: 100,
            seed: 42,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad(format!("base_lr must be positive, got {}", self.base_lr));
        }
        if !(self.lr_gamma > 0.0 && self.lr_gamma < 1.0) {
            return bad(format!("lr_gamma must lie in (0, 1), got {}", self.lr_gamma));
        }
        if self.lr_step == 0 {
            return bad("lr_step must be at least 1".into());
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        Ok(())
    }
}

/// `base_lr · gamma^floor(epoch / lr_step)`.
///
/// The power is taken by repeated multiplication so the value is bit-equal
/// to a scheduler that decays its current rate in place ([`StepLr`]);
/// `powi` rounds differently for some exponents.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let mut lr = cfg.base_lr;
    for _ in 0..epoch / cfg.lr_step {
        lr *= cfg.lr_gamma;
    }
    lr
}

/// Stateful step schedule: multiplies the rate by gamma every `step` epochs.
#[derive(Debug, Clone)]
pub struct StepLr {
    lr: f64,
    step: usize,
    gamma: f64,
    epoch: usize,
}

impl StepLr {
    pub fn new(cfg: &TrainConfig) -> Self {
        StepLr {
            lr: cfg.base_lr,
            step: cfg.lr_step,
            gamma: cfg.lr_gamma,
            epoch: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Advances to the next epoch.
    pub fn advance(&mut self) {
        self.epoch += 1;
        if self.epoch % self.step == 0 {
            self.lr *= self.gamma;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainingHistory {
    pub fn val_accs(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.val_acc).collect()
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.records.get(self.best_epoch)
    }
}

/// Epochs since the last strict improvement of the running best.
fn epochs_since_best(val_accs: &[f64]) -> usize {
    let mut best = f64::NEG_INFINITY;
    let mut since = 0;
    for &v in val_accs {
        if v > best {
            best = v;
            since = 0;
        } else {
            since += 1;
        }
    }
    since
}

/// True once the last `patience` epochs each failed to strictly beat the
/// best accuracy seen before them.
pub fn should_stop(val_accs: &[f64], patience: usize) -> bool {
    !val_accs.is_empty() && epochs_since_best(val_accs) >= patience
}

/// Earliest epoch attaining the maximum.
pub fn select_best(val_accs: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in val_accs.iter().enumerate() {
        if best.is_none_or(|b| v > val_accs[b]) {
            best = Some(i);
        }
    }
    best
}

pub struct TrainData<'a> {
    pub train: &'a dyn SampleSource,
    pub val: &'a dyn SampleSource,
    pub train_pipeline: &'a Pipeline,
    pub eval_pipeline: &'a Pipeline,
}

/// Where the best checkpoint is written (optional) and the config hash it
/// is tagged with.
#[derive(Debug, Clone, Default)]
pub struct CheckpointSink {
    pub dir: Option<PathBuf>,
    pub config_hash: String,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: TrainingHistory,
    pub checkpoint: Option<PathBuf>,
}

/// Sample order for one epoch; a pure function of (seed, epoch).
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, Stream::Shuffle, &[epoch as u64]));
    order
}

fn train_epoch(
    model: &mut dyn Network,
    data: &TrainData<'_>,
    cfg: &TrainConfig,
    opt: &mut Optimizer,
    epoch: usize,
    lr: f64,
) -> Result<(f64, f64)> {
    let order = epoch_order(data.train.len(), cfg.seed, epoch);
    let (mut loss_sum, mut correct) = (0.0, 0usize);
    for (batch, indices) in order.chunks(cfg.batch_size).enumerate() {
        let (x, labels) = load_batch(data.train, indices, data.train_pipeline, cfg.seed, epoch)?;
        zero_grad(model);
        let rng = stream_rng(cfg.seed, Stream::Dropout, &[epoch as u64, batch as u64]);
        let logits = model.forward(x, &mut Ctx::new(Mode::Train, rng))?;
        let (loss, grad) = cross_entropy(&logits, &labels)?;
        if !loss.is_finite() || !logits.all_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch, lr });
        }
        model.backward(grad)?;
        opt.step(model, lr);
        loss_sum += loss * labels.len() as f64;
        correct += count_correct(&logits, &labels);
    }
    let n = data.train.len() as f64;
    Ok((loss_sum / n, correct as f64 / n))
}

fn count_correct(logits: &Tensor, labels: &[usize]) -> usize {
    labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| {
            let row = logits.row(i);
            let probs = std::array::from_fn(|c| row[c] as f64);
            argmax(&probs) == y
        })
        .count()
}

/// Mean cross-entropy and accuracy of one deterministic eval pass.
pub fn validate(
    model: &mut dyn Network,
    source: &dyn SampleSource,
    pipeline: &Pipeline,
    batch_size: usize,
) -> Result<(f64, f64)> {
    let p = predict(model, source, pipeline, batch_size)?;
    let y_pred: Vec<usize> = p.probs.iter().map(argmax).collect();
    let acc = accuracy(&confusion(&p.y_true, &y_pred)?)?;
    Ok((mean_cross_entropy(&p.probs, &p.y_true)?, acc))
}

/// Trains until early stopping or `max_epochs`, then restores the
/// parameters of the best epoch into `model`.
pub fn train(
    model: &mut dyn Network,
    data: &TrainData<'_>,
    cfg: &TrainConfig,
    sink: &CheckpointSink,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::Config("training and validation splits must be nonempty".into()));
    }
    if data.train_pipeline.output_size() != model.input_size() {
        return Err(Error::Config(format!(
            "pipeline produces {}px images but {} expects {}px",
            data.train_pipeline.output_size(),
            model.model_id(),
            model.input_size()
        )));
    }
    let mut opt = Optimizer::new(cfg.optimizer);
    let mut schedule = StepLr::new(cfg);
    let mut records: Vec<EpochRecord> = Vec::new();
    let mut best: Option<(usize, f64, Vec<(String, Tensor)>)> = None;
    let mut checkpoint = None;
    let mut stopped_early = false;
    for epoch in 0..cfg.max_epochs {
        let lr = schedule.lr();
        model.begin_epoch(epoch);
        let (train_loss, train_acc) = train_epoch(model, data, cfg, &mut opt, epoch, lr)?;
        let (val_loss, val_acc) = validate(model, data.val, data.eval_pipeline, cfg.batch_size)?;
        log::info!(
            "{} epoch {epoch}: lr {lr:e} train loss {train_loss:.4} acc {train_acc:.4} val loss {val_loss:.4} acc {val_acc:.4}",
            model.model_id()
        );
        records.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            train_acc,
            val_loss,
            val_acc,
        });
        if best.as_ref().is_none_or(|(_, acc, _)| val_acc > *acc) {
            best = Some((epoch, val_acc, state_dict(model)));
            if let Some(dir) = &sink.dir {
                let meta = CheckpointMeta {
                    model_id: model.model_id().to_string(),
                    epoch,
                    val_accuracy: val_acc,
                    config_hash: sink.config_hash.clone(),
                };
                checkpoint = Some(save_checkpoint(model, dir, &meta)?);
            }
        }
        let accs: Vec<f64> = records.iter().map(|r| r.val_acc).collect();
        if should_stop(&accs, cfg.patience) {
            stopped_early = true;
            break;
        }
        schedule.advance();
    }
    let (best_epoch, _, state) = best.expect("at least one epoch ran");
    let state: HashMap<String, Tensor> = state.into_iter().collect();
    load_state(model, &state)?;
    Ok(TrainOutcome {
        history: TrainingHistory {
            records,
            best_epoch,
            stopped_early,
        },
        checkpoint,
    })
}

pub const CURVES_HEADER: &str = "epoch,lr,train_loss,train_acc,val_loss,val_acc";

pub fn curves_csv(history: &TrainingHistory) -> String {
    let mut out = String::from(CURVES_HEADER);
    out.push('\n');
    for r in &history.records {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.epoch, r.lr, r.train_loss, r.train_acc, r.val_loss, r.val_acc
        )
        .expect("writing to a String");
    }
    out
}

pub fn write_curves(history: &TrainingHistory, path: &Path) -> Result<()> {
    fs::write(path, curves_csv(history)).map_err(|e| Error::io(path, e))
}

pub fn read_curves(path: &Path) -> Result<Vec<EpochRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(CURVES_HEADER) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("expected header {CURVES_HEADER:?}"),
        });
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            message,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 6 {
            return Err(parse_err(format!("expected 6 fields, found {}", fields.len())));
        }
        let num = |j: usize| -> Result<f64> {
            fields[j].parse::<f64>().map_err(|e| parse_err(format!("field {}: {e}", j + 1)))
        };
        out.push(EpochRecord {
            epoch: fields[0].parse().map_err(|e| parse_err(format!("epoch: {e}")))?,
            lr: num(1)?,
            train_loss: num(2)?,
            train_acc: num(3)?,
            val_loss: num(4)?,
            val_acc: num(5)?,
        });
    }
    Ok(out)
}
