use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Mean label-smoothed softmax cross-entropy over a batch.
///
/// Targets put `1 - eps` on the true class and `eps / K` on every class.
/// Returns the loss and its gradient with respect to the logits.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &[T],
    num_classes: usize,
    labels: &[usize],
    eps: f64,
) -> Result<(f64, Vec<T>)> {
    let batch = labels.len();
    if batch == 0 || logits.len() != batch * num_classes {
        return Err(Error::structural(format!(
            "{} logits for {batch} labels and {num_classes} classes",
            logits.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::Input(format!("label {bad} outside [0, {num_classes})")));
    }
    let off = eps / num_classes as f64;
    let mut loss = 0.0;
    let mut grad = vec![T::zero(); logits.len()];
    for (b, &label) in labels.iter().enumerate() {
        let row = &logits[b * num_classes..(b + 1) * num_classes];
        let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let log_z = z.ln();
        for (k, e) in exps.iter().enumerate() {
            let target = off + if k == label { 1.0 - eps } else { 0.0 };
            let log_p = row[k].as_f64() - max - log_z;
            if target > 0.0 {
                loss -= target * log_p;
            }
            grad[b * num_classes + k] = T::from_f64_lossy((e / z - target) / batch as f64);
        }
    }
    Ok((loss / batch as f64, grad))
}

/// Row-wise argmax of a `batch x classes` logit matrix (first maximum wins).
pub fn argmax_rows<T: Scalar>(logits: &[T], num_classes: usize) -> Vec<usize> {
    logits
        .chunks(num_classes)
        .map(|row| {
            let mut best = 0;
            for (k, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}
