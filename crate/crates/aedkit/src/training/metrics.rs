//! Evaluation metrics.

use super::TrainError;
use ndarray::Array2;

/// Fraction of rows whose argmax equals the target class. Ties go to the
/// lowest index.
pub fn accuracy(logits: &Array2<f64>, classes: &[usize]) -> Result<f64, TrainError> {
    let (b, _) = logits.dim();
    if b == 0 {
        return Err(TrainError::EmptyEvalSet);
    }
    if classes.len() != b {
        return Err(TrainError::LengthMismatch {
            what: "class targets",
            got: classes.len(),
            want: b,
        });
    }
    let correct = logits
        .rows()
        .into_iter()
        .zip(classes)
        .filter(|(row, &class)| {
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
                .map(|(i, _)| i)
                .unwrap_or(0);
            argmax == class
        })
        .count();
    Ok(correct as f64 / b as f64)
}

/// Average precision of one class: precision averaged at each positive
/// hit, scanning scores in descending order with ties broken by the stable
/// original index order. `None` when the class has no positives.
pub fn average_precision(scores: &[f64], positives: &[bool]) -> Option<f64> {
    let total_pos = positives.iter().filter(|&&p| p).count();
    if total_pos == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // Stable sort keeps index order on ties.
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(std::cmp::Ordering::Equal));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &idx) in order.iter().enumerate() {
        if positives[idx] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / total_pos as f64)
}

/// Mean average precision over classes; classes without positives are
/// excluded from the mean.
pub fn mean_average_precision(
    scores: &Array2<f64>,
    labels: &Array2<f32>,
) -> Result<f64, TrainError> {
    let (b, k) = scores.dim();
    if b == 0 {
        return Err(TrainError::EmptyEvalSet);
    }
    if labels.dim() != (b, k) {
        return Err(TrainError::LengthMismatch {
            what: "label matrix",
            got: labels.len(),
            want: b * k,
        });
    }
    let mut aps = Vec::new();
    for class in 0..k {
        let col: Vec<f64> = scores.column(class).to_vec();
        let pos: Vec<bool> = labels.column(class).iter().map(|&v| v == 1.0).collect();
        if let Some(ap) = average_precision(&col, &pos) {
            aps.push(ap);
        }
    }
    if aps.is_empty() {
        return Err(TrainError::NoPositiveLabels);
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}
