//! Confusion-matrix metrics with support-weighted aggregation, and mean
//! cross-entropy over softmax probabilities.

use serde::{Deserialize, Serialize};

use crate::augment::Pipeline;
use crate::data::{ClassLabel, SampleSource, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::nn::{Ctx, Tensor};
use crate::zoo::Network;

/// Probability floor applied before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;
/// Allowed deviation of a probability row sum from 1.
pub const ROW_SUM_TOLERANCE: f64 = 1e-5;

pub type ProbRow = [f64; NUM_CLASSES];

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn support(&self) -> [u64; NUM_CLASSES] {
        self.counts.map(|row| row.iter().sum())
    }

    pub fn predicted(&self) -> [u64; NUM_CLASSES] {
        std::array::from_fn(|c| self.counts.iter().map(|row| row[c]).sum())
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|c| self.counts[c][c]).sum()
    }
}

pub fn confusion(y_true: &[usize], y_pred: &[usize]) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Contract(format!(
            "confusion: {} true labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t >= NUM_CLASSES || p >= NUM_CLASSES {
            return Err(Error::Contract(format!("label pair ({t}, {p}) outside 0..{NUM_CLASSES}")));
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Contract("accuracy of an empty confusion matrix is undefined".into()));
    }
    Ok(cm.trace() as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// One-vs-rest precision, recall and F1 per class; 0/0 is taken as 0.
pub fn per_class_prf(cm: &ConfusionMatrix) -> [ClassMetrics; NUM_CLASSES] {
    let support = cm.support();
    let predicted = cm.predicted();
    std::array::from_fn(|c| {
        let tp = cm.counts[c][c] as f64;
        let precision = ratio(tp, predicted[c] as f64);
        let recall = ratio(tp, support[c] as f64);
        let f1 = ratio(2.0 * precision * recall, precision + recall);
        ClassMetrics {
            precision,
            recall,
            f1,
            support: support[c],
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Support-weighted means. The weighted recall equals accuracy.
pub fn weighted_aggregate(per_class: &[ClassMetrics]) -> Result<Aggregate> {
    let total: u64 = per_class.iter().map(|m| m.support).sum();
    if total == 0 {
        return Err(Error::Contract("weighted average with zero total support".into()));
    }
    let mean = |f: fn(&ClassMetrics) -> f64| {
        per_class.iter().map(|m| m.support as f64 * f(m)).sum::<f64>() / total as f64
    };
    Ok(Aggregate {
        precision: mean(|m| m.precision),
        recall: mean(|m| m.recall),
        f1: mean(|m| m.f1),
    })
}

/// Unweighted means over classes, reported alongside for transparency.
pub fn macro_aggregate(per_class: &[ClassMetrics]) -> Aggregate {
    let n = per_class.len().max(1) as f64;
    Aggregate {
        precision: per_class.iter().map(|m| m.precision).sum::<f64>() / n,
        recall: per_class.iter().map(|m| m.recall).sum::<f64>() / n,
        f1: per_class.iter().map(|m| m.f1).sum::<f64>() / n,
    }
}

/// Mean of `-ln p[true]` with probabilities floored at [`PROB_FLOOR`].
pub fn mean_cross_entropy(probs: &[ProbRow], labels: &[usize]) -> Result<f64> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(Error::Contract(format!(
            "cross entropy over {} probability rows and {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let mut total = 0.0;
    for (i, (row, &y)) in probs.iter().zip(labels).enumerate() {
        let sum: f64 = row.iter().sum();
        if !((sum - 1.0).abs() <= ROW_SUM_TOLERANCE) || row.iter().any(|p| *p < 0.0) {
            return Err(Error::Contract(format!("probability row {i} sums to {sum}, not 1")));
        }
        if y >= NUM_CLASSES {
            return Err(Error::Contract(format!("label {y} outside 0..{NUM_CLASSES}")));
        }
        total -= row[y].max(PROB_FLOOR).ln();
    }
    Ok(total / probs.len() as f64)
}

/// Index of the largest entry; ties go to the lowest class id.
pub fn argmax(row: &ProbRow) -> usize {
    let mut best = 0;
    for c in 1..NUM_CLASSES {
        if row[c] > row[best] {
            best = c;
        }
    }
    best
}

pub fn softmax_row(logits: &[f32]) -> ProbRow {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v as f64));
    let exp: Vec<f64> = logits.iter().map(|v| (*v as f64 - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    std::array::from_fn(|c| exp[c] / sum)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model_id: String,
    pub avg_loss: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_class: Vec<ClassReport>,
    pub support: Vec<u64>,
    pub macro_avg: Aggregate,
    pub confusion: ConfusionMatrix,
    pub config_hash: String,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain struct") + "\n"
    }

    /// Assembles every metric from raw labels and probability rows.
    /// Predictions are the row argmax.
    pub fn from_predictions(model_id: &str, config_hash: &str, y_true: &[usize], probs: &[ProbRow]) -> Result<Self> {
        let y_pred: Vec<usize> = probs.iter().map(argmax).collect();
        let cm = confusion(y_true, &y_pred)?;
        let acc = accuracy(&cm)?;
        let per_class = per_class_prf(&cm);
        let weighted = weighted_aggregate(&per_class)?;
        Ok(MetricsReport {
            model_id: model_id.to_string(),
            avg_loss: mean_cross_entropy(probs, y_true)?,
            accuracy: acc,
            precision: weighted.precision,
            recall: weighted.recall,
            f1: weighted.f1,
            per_class: ClassLabel::ALL
                .iter()
                .zip(&per_class)
                .map(|(c, m)| ClassReport {
                    class: c.name().to_string(),
                    precision: m.precision,
                    recall: m.recall,
                    f1: m.f1,
                    support: m.support,
                })
                .collect(),
            support: cm.support().to_vec(),
            macro_avg: macro_aggregate(&per_class),
            confusion: cm,
            config_hash: config_hash.to_string(),
        })
    }
}

/// Labels and softmax probabilities of one deterministic eval pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub y_true: Vec<usize>,
    pub probs: Vec<ProbRow>,
}

/// Builds one `(B, 3, S, S)` batch from `indices` through `pipeline`.
pub fn load_batch(
    source: &dyn SampleSource,
    indices: &[usize],
    pipeline: &Pipeline,
    seed: u64,
    epoch: usize,
) -> Result<(Tensor, Vec<usize>)> {
    let s = pipeline.output_size();
    let mut data = Vec::with_capacity(indices.len() * 3 * s * s);
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        let img = source.image(i)?;
        let out = pipeline.apply_seeded(img, seed, epoch, i, &source.provenance(i))?;
        data.extend_from_slice(&out.data);
        labels.push(source.label(i).id());
    }
    Ok((Tensor::from_vec(&[indices.len(), 3, s, s], data)?, labels))
}

/// Runs `model` in eval mode over every sample of `source`, in order.
pub fn predict(
    model: &mut dyn Network,
    source: &dyn SampleSource,
    pipeline: &Pipeline,
    batch_size: usize,
) -> Result<Predictions> {
    if source.is_empty() {
        return Err(Error::Config("cannot evaluate an empty split".into()));
    }
    let mut out = Predictions {
        y_true: Vec::with_capacity(source.len()),
        probs: Vec::with_capacity(source.len()),
    };
    let indices: Vec<usize> = (0..source.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, labels) = load_batch(source, chunk, pipeline, 0, 0)?;
        let logits = model.forward(x, &mut Ctx::eval())?;
        if logits.shape() != [chunk.len(), NUM_CLASSES] {
            return Err(Error::Contract(format!("model returned logits of shape {:?}", logits.shape())));
        }
        for i in 0..chunk.len() {
            out.probs.push(softmax_row(logits.row(i)));
        }
        out.y_true.extend(labels);
    }
    Ok(out)
}

pub fn evaluate(
    model: &mut dyn Network,
    source: &dyn SampleSource,
    pipeline: &Pipeline,
    batch_size: usize,
    config_hash: &str,
) -> Result<MetricsReport> {
    let p = predict(model, source, pipeline, batch_size)?;
    let id = model.model_id().to_string();
    MetricsReport::from_predictions(&id, config_hash, &p.y_true, &p.probs)
}
