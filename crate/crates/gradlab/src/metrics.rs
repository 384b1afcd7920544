//! Leakage measurement for recovered images.
//!
//! The headline metric is the absolute variation distance (AVD): the L2
//! norm, over pixels, of the difference between the absolute spatial
//! gradients of two images. Edges and boundaries carry the recognizable
//! content of sparse images while the gradient of noise stays noise, so
//! AVD falls continuously as a reconstruction becomes visible where plain
//! MSE fluctuates. Scores are normalized by the distance between the
//! attack's initial noise image and a black image, putting "no progress"
//! at 1.0 and perfect recovery at 0.0; success thresholds of 0.6 (content
//! emerging) and 0.8 (nothing visible beyond) are applied to the
//! normalized value.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Forward-difference spatial gradient `dv/dx + dv/dy`, zero at the last
/// column/row respectively.
pub fn spatial_gradient(v: &Tensor) -> Result<Tensor> {
    if v.ndim() != 2 || v.shape()[0] < 2 || v.shape()[1] < 2 {
        return Err(Error::InvalidArgument(format!(
            "spatial gradient needs an image of at least 2x2, got {:?}",
            v.shape()
        )));
    }
    let (h, w) = (v.shape()[0], v.shape()[1]);
    let mut out = Tensor::zeros(&[h, w]);
    for i in 0..h {
        for j in 0..w {
            let dx = if j + 1 < w {
                v.at2(i, j + 1) - v.at2(i, j)
            } else {
                0.0
            };
            let dy = if i + 1 < h {
                v.at2(i + 1, j) - v.at2(i, j)
            } else {
                0.0
            };
            out.set2(i, j, dx + dy);
        }
    }
    Ok(out)
}

/// Absolute variation distance between two same-shape images.
pub fn avd(source: &Tensor, target: &Tensor) -> Result<f64> {
    if source.shape() != target.shape() {
        return Err(Error::ShapeMismatch {
            expected: source.shape().to_vec(),
            got: target.shape().to_vec(),
        });
    }
    let gs = spatial_gradient(source)?;
    let gt = spatial_gradient(target)?;
    let sum: f64 = gs
        .data()
        .iter()
        .zip(gt.data().iter())
        .map(|(&a, &b)| {
            let d = a.abs() - b.abs();
            d * d
        })
        .sum();
    Ok(sum.sqrt())
}

/// AVD scaled so the distance between the trial's initial noise image and
/// a black image is 1.0.
pub fn normalized_avd(source: &Tensor, target: &Tensor, init_noise: &Tensor) -> Result<f64> {
    let black = Tensor::zeros(init_noise.shape());
    let divisor = avd(init_noise, &black)?;
    if divisor == 0.0 {
        return Err(Error::ZeroDivisor("normalized_avd"));
    }
    Ok(avd(source, target)? / divisor)
}

/// Mean squared pixel difference scaled by the mean squared difference
/// between the initial noise image and black.
pub fn normalized_mse(source: &Tensor, target: &Tensor, init_noise: &Tensor) -> Result<f64> {
    if source.shape() != target.shape() {
        return Err(Error::ShapeMismatch {
            expected: source.shape().to_vec(),
            got: target.shape().to_vec(),
        });
    }
    let mse = |a: &Tensor, b: &Tensor| -> f64 {
        a.data()
            .iter()
            .zip(b.data().iter())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum::<f64>()
            / a.len() as f64
    };
    let divisor = init_noise.data().iter().map(|&v| v * v).sum::<f64>() / init_noise.len() as f64;
    if divisor == 0.0 {
        return Err(Error::ZeroDivisor("normalized_mse"));
    }
    Ok(mse(source, target) / divisor)
}

/// Configuration for the entropy-variation variant.
#[derive(Debug, Clone, Copy)]
pub struct EntropyVariationConfig {
    /// Expected value of the attack's initial input; 0.5 for uniform
    /// noise on (0, 1).
    pub p0: f64,
    /// Guard added inside the logarithms.
    pub epsilon: f64,
}

impl Default for EntropyVariationConfig {
    fn default() -> Self {
        EntropyVariationConfig {
            p0: 0.5,
            epsilon: 1e-8,
        }
    }
}

/// Entropy-style variation score: `-p0` times the per-pixel sum of the
/// log-ratio of absolute spatial gradients. Zero when the images agree,
/// antisymmetric under swapping them.
pub fn entropy_variation(
    source: &Tensor,
    target: &Tensor,
    cfg: &EntropyVariationConfig,
) -> Result<f64> {
    if source.shape() != target.shape() {
        return Err(Error::ShapeMismatch {
            expected: source.shape().to_vec(),
            got: target.shape().to_vec(),
        });
    }
    if !(cfg.p0 > 0.0 && cfg.p0 < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "p0 must lie in (0, 1), got {}",
            cfg.p0
        )));
    }
    let gs = spatial_gradient(source)?;
    let gt = spatial_gradient(target)?;
    let sum: f64 = gs
        .data()
        .iter()
        .zip(gt.data().iter())
        .map(|(&a, &b)| (a.abs() + cfg.epsilon).ln() - (b.abs() + cfg.epsilon).ln())
        .sum();
    Ok(-cfg.p0 * sum)
}

/// Success iff the metric value is strictly below the threshold.
pub fn classify_success(metric_value: f64, threshold: f64) -> bool {
    metric_value < threshold
}

/// Leakage scores of one recovered image against one source.
#[derive(Debug, Clone)]
pub struct LeakageReport {
    pub avd_raw: f64,
    pub avd_normalized: f64,
    pub mse_normalized: f64,
    /// `(threshold, success)` pairs on the normalized AVD.
    pub success_at: Vec<(f64, bool)>,
}

pub fn leakage_report(
    source: &Tensor,
    target: &Tensor,
    init_noise: &Tensor,
    thresholds: &[f64],
) -> Result<LeakageReport> {
    let avd_raw = avd(source, target)?;
    let avd_normalized = normalized_avd(source, target, init_noise)?;
    let mse_normalized = normalized_mse(source, target, init_noise)?;
    Ok(LeakageReport {
        avd_raw,
        avd_normalized,
        mse_normalized,
        success_at: thresholds
            .iter()
            .map(|&t| (t, classify_success(avd_normalized, t)))
            .collect(),
    })
}

/// Batch-level leakage: each recovered vector is scored against its
/// best-matching source, and the trial score is the minimum over
/// recovered vectors — success means information leaked about at least
/// one input in the batch. AVD and MSE pick their best matches
/// independently.
#[derive(Debug, Clone)]
pub struct BatchLeakage {
    pub per_vector_avd: Vec<f64>,
    pub per_vector_mse: Vec<f64>,
    pub min_avd_normalized: f64,
    pub min_mse_normalized: f64,
}

pub fn batch_leakage(
    sources: &Tensor,
    recovered: &Tensor,
    init_noise: &Tensor,
) -> Result<BatchLeakage> {
    if sources.ndim() != 3 || recovered.ndim() != 3 || init_noise.ndim() != 3 {
        return Err(Error::InvalidArgument(
            "batch leakage expects [B, H, W] stacks".into(),
        ));
    }
    let b_rec = recovered.shape()[0];
    let b_src = sources.shape()[0];
    let mut per_vector_avd = Vec::with_capacity(b_rec);
    let mut per_vector_mse = Vec::with_capacity(b_rec);
    for m in 0..b_rec {
        let rec = recovered.subtensor(m);
        let noise = init_noise.subtensor(m);
        let mut best_avd = f64::INFINITY;
        let mut best_mse = f64::INFINITY;
        for s in 0..b_src {
            let src = sources.subtensor(s);
            best_avd = best_avd.min(normalized_avd(&src, &rec, &noise)?);
            best_mse = best_mse.min(normalized_mse(&src, &rec, &noise)?);
        }
        per_vector_avd.push(best_avd);
        per_vector_mse.push(best_mse);
    }
    let min_avd = per_vector_avd.iter().cloned().fold(f64::INFINITY, f64::min);
    let min_mse = per_vector_mse.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(BatchLeakage {
        per_vector_avd,
        per_vector_mse,
        min_avd_normalized: min_avd,
        min_mse_normalized: min_mse,
    })
}

/// Spearman rank correlation between two equally long samples; used by
/// calibration checks that assert monotone trends.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let ra = ranks(a);
    let rb = ranks(b);
    let n = a.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for (x, y) in ra.iter().zip(rb.iter()) {
        num += (x - mean) * (y - mean);
        da += (x - mean) * (x - mean);
        db += (y - mean) * (y - mean);
    }
    num / (da.sqrt() * db.sqrt())
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).expect("finite values"));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}
