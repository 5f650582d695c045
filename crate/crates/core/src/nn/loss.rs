use super::Tensor;
use crate::error::{Error, Result};

/// Row-wise softmax of a (B, K) logit matrix.
pub fn softmax(logits: &Tensor) -> Tensor {
    let (b, k) = logits.dims2();
    let mut out = logits.clone();
    for i in 0..b {
        let row = &mut out.data_mut()[i * k..(i + 1) * k];
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f64;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v as f64;
        }
        row.iter_mut().for_each(|v| *v = (*v as f64 / sum) as f32);
    }
    out
}

/// Mean softmax cross-entropy over the batch and its gradient with respect
/// to the logits.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (b, k) = logits.dims2();
    if labels.len() != b || b == 0 {
        return Err(Error::Contract(format!(
            "cross entropy: {b} logit rows but {} labels",
            labels.len()
        )));
    }
    let mut grad = Tensor::zeros(&[b, k]);
    let mut total = 0.0f64;
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::Contract(format!("label {y} out of range for {k} classes")));
        }
        let row = &logits.data()[i * k..(i + 1) * k];
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let sum: f64 = row.iter().map(|v| (*v as f64 - max).exp()).sum();
        let log_z = max + sum.ln();
        total += log_z - row[y] as f64;
        let g = &mut grad.data_mut()[i * k..(i + 1) * k];
        for (j, gv) in g.iter_mut().enumerate() {
            let p = (row[j] as f64 - log_z).exp();
            *gv = ((p - if j == y { 1.0 } else { 0.0 }) / b as f64) as f32;
        }
    }
    Ok((total / b as f64, grad))
}
