//! Closed-form, optimization-free recovery of dense-layer inputs from
//! shared gradients, label-distribution inference from bias-gradient
//! signs, error measurement against ground truth, and the additive
//! Gaussian-noise defense baseline.
//!
//! The core identity: for a dense layer trained with softmax
//! cross-entropy, each per-sample weight-gradient column is the input
//! scaled by the matching bias gradient, so the ratio
//! `grad_w[:, j] / grad_b[j]` recovers an input vector whenever class j's
//! contribution dominates that column — which batch averaging preserves
//! as long as labels do not collide and the class count is large.

use crate::datasets::Batch;
use crate::error::{Error, Result};
use crate::models::GradientBundle;
use crate::numerics::{SeededRng, Tensor};

/// Bias gradients with magnitude at or below this threshold are treated
/// as vanishing: their ratio column is skipped rather than divided out.
pub const DIVISOR_EPS: f64 = 1e-8;

/// Per-class input estimates recovered from a dense-layer bundle.
#[derive(Debug, Clone)]
pub struct DirectInversionEstimate {
    /// `(class, estimate)` pairs, ascending by class, for every class
    /// whose bias gradient cleared [`DIVISOR_EPS`].
    pub estimates: Vec<(usize, Tensor)>,
    /// Classes whose bias gradient was too small to divide by.
    pub skipped_classes: Vec<usize>,
}

impl DirectInversionEstimate {
    pub fn estimate_for(&self, class: usize) -> Option<&Tensor> {
        self.estimates
            .iter()
            .find(|(c, _)| *c == class)
            .map(|(_, t)| t)
    }
}

/// Ratio inversion of an averaged dense-layer gradient pair.
pub fn invert_dense_batch(grad_w: &Tensor, grad_b: &Tensor) -> Result<DirectInversionEstimate> {
    if grad_w.ndim() != 2 || grad_b.ndim() != 1 || grad_w.shape()[1] != grad_b.shape()[0] {
        return Err(Error::ShapeMismatch {
            expected: grad_w.shape().to_vec(),
            got: grad_b.shape().to_vec(),
        });
    }
    let (n, c) = (grad_w.shape()[0], grad_w.shape()[1]);
    let mut estimates = Vec::new();
    let mut skipped = Vec::new();
    for j in 0..c {
        let denom = grad_b.data()[j];
        if denom.abs() > DIVISOR_EPS {
            let column: Vec<f64> = (0..n).map(|i| grad_w.at2(i, j) / denom).collect();
            estimates.push((j, Tensor::from_vec(&[n], column)?));
        } else {
            skipped.push(j);
        }
    }
    if estimates.is_empty() {
        return Err(Error::NothingInvertible);
    }
    Ok(DirectInversionEstimate {
        estimates,
        skipped_classes: skipped,
    })
}

/// How much to trust sign-based label inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Confidence {
    /// Class count well above batch size; negative-gradient reading is
    /// reliable on an untrained model.
    High,
    /// Batch size comparable to class count; non-target softmax outputs
    /// can push averaged gradients positive and hide labels.
    Low,
}

/// Inferred label multiset for a captured bundle.
#[derive(Debug, Clone)]
pub struct LabelInference {
    /// Expanded multiset, ascending by class.
    pub labels: Vec<usize>,
    /// Estimated count per class.
    pub counts: Vec<usize>,
    pub confidence: Confidence,
}

/// Reads the batch's label distribution off the averaged bias gradient of
/// an untrained softmax cross-entropy model: classes with negative
/// entries are present, and `round(B * (1/C - grad_b[j]))` estimates the
/// per-class count.
///
/// Confidence is high only when the class count dwarfs the batch size
/// (single-sample batches are always safe).
pub fn infer_label_distribution(
    grad_b: &Tensor,
    _grad_w: &Tensor,
    num_classes: usize,
    batch_size: usize,
) -> LabelInference {
    debug_assert_eq!(grad_b.len(), num_classes);
    let b = batch_size as f64;
    let uniform = 1.0 / num_classes as f64;
    let mut counts = vec![0usize; num_classes];
    for (j, count) in counts.iter_mut().enumerate() {
        let g = grad_b.data()[j];
        if g < 0.0 {
            let est = (b * (uniform - g)).round();
            *count = (est.max(1.0) as usize).min(batch_size);
        }
    }
    let mut labels = Vec::new();
    for (j, &count) in counts.iter().enumerate() {
        for _ in 0..count {
            labels.push(j);
        }
    }
    labels.truncate(batch_size);
    let confidence = if batch_size == 1 || num_classes >= 10 * batch_size {
        Confidence::High
    } else {
        Confidence::Low
    };
    LabelInference {
        labels,
        counts,
        confidence,
    }
}

/// Adds independent `N(0, std^2)` noise to every entry of every tensor in
/// the bundle.
pub fn apply_noise_defense(
    bundle: &GradientBundle,
    std: f64,
    rng: &mut SeededRng,
) -> Result<GradientBundle> {
    if std < 0.0 || !std.is_finite() {
        return Err(Error::NegativeStd(std));
    }
    let grads = bundle
        .grads
        .iter()
        .map(|t| {
            let noise = rng.gaussian(t.shape(), std)?;
            t.add(&noise)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GradientBundle {
        grads,
        scope: bundle.scope,
    })
}

/// Error of one recovered vector against its ground-truth sample.
#[derive(Debug, Clone)]
pub struct VectorError {
    /// Position of the sample in the batch.
    pub batch_index: usize,
    /// Class whose ratio column was used.
    pub matched_class: usize,
    pub per_pixel_abs_error: Tensor,
    pub median_abs: f64,
    pub mean_abs: f64,
}

/// Error statistics of an inversion estimate against the true batch.
#[derive(Debug, Clone)]
pub struct InversionErrorStats {
    pub per_vector: Vec<VectorError>,
    /// Batch samples whose class had no usable estimate.
    pub unmatched: Vec<usize>,
    /// Median of per-pixel absolute errors pooled over all matched
    /// vectors.
    pub median_abs: f64,
    pub mean_abs: f64,
}

impl InversionErrorStats {
    /// Pooled per-pixel absolute errors of every matched vector.
    pub fn pooled_errors(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for v in &self.per_vector {
            out.extend_from_slice(v.per_pixel_abs_error.data());
        }
        out
    }
}

/// Evaluation-mode error measurement: each batch sample is compared with
/// the ratio estimate of its own true class.
pub fn inversion_error(
    estimate: &DirectInversionEstimate,
    truth: &Batch,
) -> Result<InversionErrorStats> {
    let flat = truth.flattened();
    let mut per_vector = Vec::new();
    let mut unmatched = Vec::new();
    for (m, &label) in truth.labels.iter().enumerate() {
        match estimate.estimate_for(label) {
            Some(recovered) => {
                if recovered.len() != flat.shape()[1] {
                    return Err(Error::ShapeMismatch {
                        expected: vec![flat.shape()[1]],
                        got: recovered.shape().to_vec(),
                    });
                }
                let errs: Vec<f64> = recovered
                    .data()
                    .iter()
                    .zip(flat.row(m).iter())
                    .map(|(&e, &t)| (e - t).abs())
                    .collect();
                let mean = errs.iter().sum::<f64>() / errs.len() as f64;
                let med = median(&mut errs.clone());
                per_vector.push(VectorError {
                    batch_index: m,
                    matched_class: label,
                    per_pixel_abs_error: Tensor::from_vec(&[errs.len()], errs)?,
                    median_abs: med,
                    mean_abs: mean,
                });
            }
            None => unmatched.push(m),
        }
    }
    if per_vector.is_empty() {
        return Err(Error::NoMatchedClasses);
    }
    let mut pooled: Vec<f64> = per_vector
        .iter()
        .flat_map(|v| v.per_pixel_abs_error.data().iter().cloned())
        .collect();
    let mean_abs = pooled.iter().sum::<f64>() / pooled.len() as f64;
    let median_abs = median(&mut pooled);
    Ok(InversionErrorStats {
        per_vector,
        unmatched,
        median_abs,
        mean_abs,
    })
}

/// Median of a mutable sample (sorted in place).
pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Histogram bin edges used for log10-error plots: width 0.5 from 1e-16
/// up to 1e2, with underflow clamped into the lowest bin.
pub const LOG10_BIN_LO: f64 = -16.0;
pub const LOG10_BIN_HI: f64 = 2.0;
pub const LOG10_BIN_WIDTH: f64 = 0.5;

/// Bins `log10(error)` values; returns `(bin_lower_edge, count)` rows for
/// every non-empty bin, ascending.
pub fn log10_error_histogram(errors: &[f64]) -> Vec<(f64, usize)> {
    let bins = ((LOG10_BIN_HI - LOG10_BIN_LO) / LOG10_BIN_WIDTH) as usize;
    let mut counts = vec![0usize; bins];
    for &e in errors {
        let l = if e > 0.0 { e.log10() } else { LOG10_BIN_LO };
        let idx = (((l - LOG10_BIN_LO) / LOG10_BIN_WIDTH).floor() as i64)
            .clamp(0, bins as i64 - 1) as usize;
        counts[idx] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .filter(|(_, c)| *c > 0)
        .map(|(i, c)| (LOG10_BIN_LO + i as f64 * LOG10_BIN_WIDTH, c))
        .collect()
}
