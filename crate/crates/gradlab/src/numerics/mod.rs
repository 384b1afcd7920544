//! Deterministic numeric core: tensors, seeded randomness, norms and a
//! finite-difference gradient oracle used to validate every analytic
//! gradient in the crate.

mod rng;
mod tensor;

pub use rng::{stream_hash, SeededRng};
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Euclidean norm over all elements.
pub fn l2_norm(t: &Tensor) -> f64 {
    t.data().iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Cosine similarity in `[-1, 1]`; errors on shape mismatch or zero input.
pub fn cosine_similarity(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            expected: a.shape().to_vec(),
            got: b.shape().to_vec(),
        });
    }
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot(a.data(), b.data()) / (na * nb)).clamp(-1.0, 1.0))
}

/// Central-difference gradient `(f(x + h e_i) - f(x - h e_i)) / 2h`.
///
/// The oracle against which hand-derived gradients are checked. Kept
/// deliberately independent of any analytic backpropagation path.
pub fn finite_diff_gradient(f: impl Fn(&Tensor) -> f64, x: &Tensor, h: f64) -> Result<Tensor> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "step size must be positive, got {h}"
        )));
    }
    let mut probe = x.clone();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let fp = f(&probe);
        probe.data_mut()[i] = orig - h;
        let fm = f(&probe);
        probe.data_mut()[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite("finite-difference evaluation"));
        }
        grad[i] = (fp - fm) / (2.0 * h);
    }
    Tensor::from_vec(x.shape(), grad)
}

/// Largest elementwise relative error between two same-shape tensors,
/// with an absolute floor for entries near zero.
pub fn max_relative_error(a: &Tensor, b: &Tensor, floor: f64) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data().iter())
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
