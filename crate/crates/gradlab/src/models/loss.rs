use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// The three studied loss configurations on top of the raw logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Softmax followed by cross-entropy.
    SoftmaxCe,
    /// Squared error directly on the logits, no softmax.
    Mse,
    /// Softmax followed by squared error.
    SoftmaxMse,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::SoftmaxCe => "softmax_ce",
            LossKind::Mse => "mse",
            LossKind::SoftmaxMse => "softmax_mse",
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Numerically stable softmax (max-subtraction before exponentiation).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&o| (o - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|&o| (o - max).exp()).sum::<f64>().ln()
}

/// Per-sample loss for one logit row against a target row.
///
/// Targets may be soft (e.g. softmaxed candidate labels); for the
/// cross-entropy case they are assumed to sum to one.
pub(crate) fn loss_value_row(logits: &[f64], target: &[f64], kind: LossKind) -> f64 {
    match kind {
        LossKind::SoftmaxCe => {
            let lse = log_sum_exp(logits);
            -logits
                .iter()
                .zip(target.iter())
                .map(|(&o, &y)| y * (o - lse))
                .sum::<f64>()
        }
        LossKind::Mse => logits
            .iter()
            .zip(target.iter())
            .map(|(&o, &y)| (y - o) * (y - o))
            .sum(),
        LossKind::SoftmaxMse => {
            let p = softmax(logits);
            p.iter()
                .zip(target.iter())
                .map(|(&p, &y)| (y - p) * (y - p))
                .sum()
        }
    }
}

/// Derivative of the per-sample loss with respect to each logit.
///
/// This residual is the building block of every parameter gradient in the
/// crate: for a dense layer the weight gradient is the outer product of
/// the input with this vector and the bias gradient is the vector itself.
pub(crate) fn residual_row(logits: &[f64], target: &[f64], kind: LossKind) -> Vec<f64> {
    match kind {
        LossKind::SoftmaxCe => softmax(logits)
            .iter()
            .zip(target.iter())
            .map(|(&p, &y)| p - y)
            .collect(),
        LossKind::Mse => logits
            .iter()
            .zip(target.iter())
            .map(|(&o, &y)| 2.0 * (o - y))
            .collect(),
        LossKind::SoftmaxMse => {
            let p = softmax(logits);
            let q: f64 = p
                .iter()
                .zip(target.iter())
                .map(|(&p, &y)| (p - y) * p)
                .sum();
            p.iter()
                .zip(target.iter())
                .map(|(&p, &y)| 2.0 * p * ((p - y) - q))
                .collect()
        }
    }
}

/// Per-sample losses and their batch mean. Targets must be exact one-hot
/// rows.
pub fn loss(logits: &Tensor, onehot_targets: &Tensor, kind: LossKind) -> Result<(Vec<f64>, f64)> {
    if logits.shape() != onehot_targets.shape() || logits.ndim() != 2 {
        return Err(Error::ShapeMismatch {
            expected: logits.shape().to_vec(),
            got: onehot_targets.shape().to_vec(),
        });
    }
    let b = logits.shape()[0];
    for m in 0..b {
        let row = onehot_targets.row(m);
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        let zeros = row.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || ones + zeros != row.len() {
            return Err(Error::InvalidArgument(format!(
                "target row {m} is not one-hot"
            )));
        }
    }
    let per_sample: Vec<f64> = (0..b)
        .map(|m| loss_value_row(logits.row(m), onehot_targets.row(m), kind))
        .collect();
    let mean = per_sample.iter().sum::<f64>() / b as f64;
    Ok((per_sample, mean))
}

/// One-hot encodes integer labels.
pub fn one_hot(labels: &[usize], num_classes: usize) -> Result<Tensor> {
    let mut t = Tensor::zeros(&[labels.len(), num_classes]);
    for (m, &l) in labels.iter().enumerate() {
        if l >= num_classes {
            return Err(Error::InvalidArgument(format!(
                "label {l} out of range for {num_classes} classes"
            )));
        }
        t.set2(m, l, 1.0);
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_symmetry_and_shift() {
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
        let big = softmax(&[1000.0, 1000.0]);
        assert!((big[0] - 0.5).abs() < 1e-12 && big[1].is_finite());
        let p = softmax(&[2.0f64.ln(), 0.0]);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_logits_give_ln_c() {
        let logits = Tensor::zeros(&[1, 10]);
        let targets = one_hot(&[3], 10).unwrap();
        let (_, mean) = loss(&logits, &targets, LossKind::SoftmaxCe).unwrap();
        assert!((mean - 10.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn mse_zero_at_perfect_fit() {
        let logits = one_hot(&[2], 5).unwrap();
        let targets = one_hot(&[2], 5).unwrap();
        let (_, mean) = loss(&logits, &targets, LossKind::Mse).unwrap();
        assert_eq!(mean, 0.0);
    }

    #[test]
    fn softmax_mse_symmetric_two_class() {
        let logits = Tensor::zeros(&[1, 2]);
        let targets = one_hot(&[0], 2).unwrap();
        let (_, mean) = loss(&logits, &targets, LossKind::SoftmaxMse).unwrap();
        assert!((mean - 0.5).abs() < 1e-12);
    }

    #[test]
    fn non_one_hot_target_rejected() {
        let logits = Tensor::zeros(&[1, 3]);
        let soft = Tensor::from_vec(&[1, 3], vec![0.5, 0.5, 0.0]).unwrap();
        assert!(loss(&logits, &soft, LossKind::SoftmaxCe).is_err());
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(
            logits in proptest::collection::vec(-50.0f64..50.0, 2..12),
            shift in -100.0f64..100.0,
        ) {
            let p = softmax(&logits);
            let total: f64 = p.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&v| v > 0.0));
            let shifted: Vec<f64> = logits.iter().map(|&o| o + shift).collect();
            let q = softmax(&shifted);
            for (a, b) in p.iter().zip(q.iter()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
