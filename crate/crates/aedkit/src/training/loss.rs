//! Losses and class weighting.
//!
//! Cross entropy is stabilized by max subtraction; binary cross entropy
//! uses the log-sum-exp form `max(z,0) - z*t + ln(1 + e^(-|z|))`, exact for
//! any logit sign. Batch variants also return the logit gradients.

use super::TrainError;
use crate::model::Scalar;
use ndarray::{Array2, ArrayView1};

/// `-log softmax(logits)[class]` for one example.
pub fn cross_entropy<F: Scalar>(logits: ArrayView1<F>, class: usize) -> Result<f64, TrainError> {
    if class >= logits.len() {
        return Err(TrainError::ClassOutOfRange {
            class,
            n_classes: logits.len(),
        });
    }
    let z: Vec<f64> = logits.iter().map(|v| v.cast_to_f64()).collect();
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    Ok(lse - z[class])
}

/// Mean cross entropy over a batch plus `d loss / d logits`.
pub fn cross_entropy_batch<F: Scalar>(
    logits: &Array2<F>,
    classes: &[usize],
) -> Result<(f64, Array2<F>), TrainError> {
    let (b, k) = logits.dim();
    if classes.len() != b {
        return Err(TrainError::LengthMismatch {
            what: "class targets",
            got: classes.len(),
            want: b,
        });
    }
    let mut total = 0.0;
    let mut grad = Array2::<F>::zeros((b, k));
    let inv_b = 1.0 / b as f64;
    for (i, &class) in classes.iter().enumerate() {
        if class >= k {
            return Err(TrainError::ClassOutOfRange {
                class,
                n_classes: k,
            });
        }
        let row: Vec<f64> = logits.row(i).iter().map(|v| v.cast_to_f64()).collect();
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        total += max + sum.ln() - row[class];
        for j in 0..k {
            let softmax = (row[j] - max).exp() / sum;
            let indicator = if j == class { 1.0 } else { 0.0 };
            grad[[i, j]] = F::cast_from_f64((softmax - indicator) * inv_b);
        }
    }
    Ok((total * inv_b, grad))
}

/// Per-class weighted binary cross entropy for one example: the mean over
/// classes of `w_c * (-t ln sigma(z) - (1-t) ln(1 - sigma(z)))`.
pub fn weighted_bce<F: Scalar>(
    logits: ArrayView1<F>,
    targets: &[f32],
    weights: &[f32],
) -> Result<f64, TrainError> {
    let k = logits.len();
    if targets.len() != k {
        return Err(TrainError::LengthMismatch {
            what: "targets",
            got: targets.len(),
            want: k,
        });
    }
    if weights.len() != k {
        return Err(TrainError::LengthMismatch {
            what: "class weights",
            got: weights.len(),
            want: k,
        });
    }
    let mut total = 0.0;
    for (j, v) in logits.iter().enumerate() {
        let z = v.cast_to_f64();
        let t = targets[j] as f64;
        total += weights[j] as f64 * (z.max(0.0) - z * t + (-z.abs()).exp().ln_1p());
    }
    Ok(total / k as f64)
}

/// Mean weighted BCE over a batch plus `d loss / d logits`.
pub fn weighted_bce_batch<F: Scalar>(
    logits: &Array2<F>,
    targets: &Array2<f32>,
    weights: &[f32],
) -> Result<(f64, Array2<F>), TrainError> {
    let (b, k) = logits.dim();
    if targets.dim() != (b, k) {
        return Err(TrainError::LengthMismatch {
            what: "target matrix",
            got: targets.len(),
            want: b * k,
        });
    }
    if weights.len() != k {
        return Err(TrainError::LengthMismatch {
            what: "class weights",
            got: weights.len(),
            want: k,
        });
    }
    let mut total = 0.0;
    let mut grad = Array2::<F>::zeros((b, k));
    let inv_n = 1.0 / (b * k) as f64;
    for i in 0..b {
        for j in 0..k {
            let z = logits[[i, j]].cast_to_f64();
            let t = targets[[i, j]] as f64;
            let w = weights[j] as f64;
            total += w * (z.max(0.0) - z * t + (-z.abs()).exp().ln_1p());
            let sigma = 1.0 / (1.0 + (-z).exp());
            grad[[i, j]] = F::cast_from_f64(w * (sigma - t) * inv_n);
        }
    }
    Ok((total * inv_n, grad))
}

/// Inverse-frequency class weights, normalized so a balanced manifest
/// yields all ones: `w_c = N / (K * count_c)`.
pub fn class_weights(counts: &[usize]) -> Result<Vec<f32>, TrainError> {
    if counts.is_empty() {
        return Err(TrainError::InvalidConfig("no classes".to_string()));
    }
    if let Some(class) = counts.iter().position(|&c| c == 0) {
        return Err(TrainError::ClassWithZeroExamples(class));
    }
    let n: usize = counts.iter().sum();
    let k = counts.len();
    Ok(counts
        .iter()
        .map(|&c| (n as f64 / (k as f64 * c as f64)) as f32)
        .collect())
}
