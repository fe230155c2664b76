//! Classification metrics: accuracy and macro F1.

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("metric input is empty")]
    EmptyInput,
    #[error("prediction and label counts differ: {preds} vs {labels}")]
    LengthMismatch { preds: usize, labels: usize },
    #[error("value {value} out of range for {classes} classes at index {index}")]
    ValueOutOfRange {
        value: usize,
        classes: usize,
        index: usize,
    },
}

/// Index of the first maximum of a logit row.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64, MetricsError> {
    if preds.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            preds: preds.len(),
            labels: labels.len(),
        });
    }
    if preds.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / preds.len() as f64)
}

/// Unweighted mean of per-class F1 scores. A class with no predictions and
/// no instances contributes 0, keeping the metric total over all classes.
pub fn macro_f1(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<f64, MetricsError> {
    if preds.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            preds: preds.len(),
            labels: labels.len(),
        });
    }
    if preds.is_empty() || num_classes == 0 {
        return Err(MetricsError::EmptyInput);
    }
    let mut tp = vec![0u64; num_classes];
    let mut fp = vec![0u64; num_classes];
    let mut fn_ = vec![0u64; num_classes];
    for (i, (&p, &l)) in preds.iter().zip(labels).enumerate() {
        if p >= num_classes {
            return Err(MetricsError::ValueOutOfRange {
                value: p,
                classes: num_classes,
                index: i,
            });
        }
        if l >= num_classes {
            return Err(MetricsError::ValueOutOfRange {
                value: l,
                classes: num_classes,
                index: i,
            });
        }
        if p == l {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[l] += 1;
        }
    }
    let mut total = 0.0;
    for c in 0..num_classes {
        let denom = 2 * tp[c] + fp[c] + fn_[c];
        if denom > 0 {
            total += 2.0 * tp[c] as f64 / denom as f64;
        }
    }
    Ok(total / num_classes as f64)
}

/// Row-wise softmax used when reporting per-class probabilities.
pub fn softmax_row(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}
