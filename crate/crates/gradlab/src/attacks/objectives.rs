//! Attack objective terms and their gradients: gradient-difference norm,
//! cosine distance between bundles, total variation on candidate images,
//! and the pairwise-orthogonality penalty over a candidate batch.

use crate::error::{Error, Result};
use crate::models::GradientBundle;
use crate::numerics::{dot, Tensor};

const NORM_EPS: f64 = 1e-12;

fn check_shapes(candidate: &GradientBundle, observed: &GradientBundle) -> Result<()> {
    if !candidate.same_shapes(observed) {
        return Err(Error::InvalidArgument(
            "candidate and observed bundles have different shapes".into(),
        ));
    }
    Ok(())
}

/// Euclidean norm of the difference between two bundles, over all
/// entries.
pub fn objective_l2(candidate: &GradientBundle, observed: &GradientBundle) -> Result<f64> {
    check_shapes(candidate, observed)?;
    let sum: f64 = candidate
        .grads
        .iter()
        .zip(observed.grads.iter())
        .map(|(c, o)| {
            c.data()
                .iter()
                .zip(o.data().iter())
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .sum();
    Ok(sum.sqrt())
}

/// L2 objective with its adjoint with respect to the candidate bundle.
/// At a perfect match the adjoint is zero (stationary point).
pub fn objective_l2_with_adjoint(
    candidate: &GradientBundle,
    observed: &GradientBundle,
) -> Result<(f64, Vec<Tensor>)> {
    let value = objective_l2(candidate, observed)?;
    let adjoint = candidate
        .grads
        .iter()
        .zip(observed.grads.iter())
        .map(|(c, o)| {
            if value < NORM_EPS {
                Tensor::zeros(c.shape())
            } else {
                c.zip_with(o, |a, b| (a - b) / value).expect("same shapes")
            }
        })
        .collect();
    Ok((value, adjoint))
}

/// Cosine distance `1 - <c, o> / (|c| |o|)` over the flattened bundles,
/// in `[0, 2]`.
pub fn objective_cosine(candidate: &GradientBundle, observed: &GradientBundle) -> Result<f64> {
    check_shapes(candidate, observed)?;
    let (c, o) = (candidate.flat(), observed.flat());
    let nc = dot(&c, &c).sqrt();
    let no = dot(&o, &o).sqrt();
    if nc == 0.0 || no == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((1.0 - dot(&c, &o) / (nc * no)).clamp(0.0, 2.0))
}

/// Cosine objective with its adjoint with respect to the candidate.
pub fn objective_cosine_with_adjoint(
    candidate: &GradientBundle,
    observed: &GradientBundle,
) -> Result<(f64, Vec<Tensor>)> {
    check_shapes(candidate, observed)?;
    let (c, o) = (candidate.flat(), observed.flat());
    let nc = dot(&c, &c).sqrt();
    let no = dot(&o, &o).sqrt();
    if nc == 0.0 || no == 0.0 {
        return Err(Error::ZeroVector);
    }
    let co = dot(&c, &o);
    let value = (1.0 - co / (nc * no)).clamp(0.0, 2.0);
    // d/dc of -<c,o>/(|c||o|) = -o/(|c||o|) + <c,o> c / (|c|^3 |o|)
    let flat_adj: Vec<f64> = c
        .iter()
        .zip(o.iter())
        .map(|(&ci, &oi)| -oi / (nc * no) + co * ci / (nc * nc * nc * no))
        .collect();
    let mut adjoint = Vec::with_capacity(candidate.grads.len());
    let mut offset = 0;
    for t in &candidate.grads {
        let len = t.len();
        adjoint.push(Tensor::from_vec(t.shape(), flat_adj[offset..offset + len].to_vec())?);
        offset += len;
    }
    Ok((value, adjoint))
}

/// Anisotropic total variation of a `[B, H, W]` candidate stack: the sum
/// of absolute horizontal and vertical neighbor differences.
pub fn tv_penalty(images: &Tensor) -> Result<f64> {
    let (b, h, w) = spatial_dims(images)?;
    let mut total = 0.0;
    for m in 0..b {
        let img = plane(images, m, h, w);
        for i in 0..h {
            for j in 0..w {
                if j + 1 < w {
                    total += (img[i * w + j + 1] - img[i * w + j]).abs();
                }
                if i + 1 < h {
                    total += (img[(i + 1) * w + j] - img[i * w + j]).abs();
                }
            }
        }
    }
    Ok(total)
}

/// Subgradient of [`tv_penalty`] (sign convention: 0 at exact ties).
pub fn tv_penalty_grad(images: &Tensor) -> Result<Tensor> {
    let (b, h, w) = spatial_dims(images)?;
    let mut grad = vec![0.0; images.len()];
    for m in 0..b {
        let img = plane(images, m, h, w);
        let g = &mut grad[m * h * w..(m + 1) * h * w];
        for i in 0..h {
            for j in 0..w {
                if j + 1 < w {
                    let s = sign(img[i * w + j + 1] - img[i * w + j]);
                    g[i * w + j + 1] += s;
                    g[i * w + j] -= s;
                }
                if i + 1 < h {
                    let s = sign(img[(i + 1) * w + j] - img[i * w + j]);
                    g[(i + 1) * w + j] += s;
                    g[i * w + j] -= s;
                }
            }
        }
    }
    Tensor::from_vec(images.shape(), grad)
}

/// Sum of squared pairwise cosine similarities between the flattened
/// candidate vectors of a batch; zero for a single-sample batch.
pub fn orth_penalty(images: &Tensor) -> Result<f64> {
    let rows = flat_rows(images)?;
    let b = rows.len();
    let mut total = 0.0;
    for m in 0..b {
        for l in m + 1..b {
            total += pair_cosine(&rows[m], &rows[l]).powi(2);
        }
    }
    Ok(total)
}

/// Gradient of [`orth_penalty`] with respect to every candidate pixel.
pub fn orth_penalty_grad(images: &Tensor) -> Result<Tensor> {
    let rows = flat_rows(images)?;
    let b = rows.len();
    let n = if b > 0 { rows[0].len() } else { 0 };
    let mut grad = vec![0.0; images.len()];
    for m in 0..b {
        for l in m + 1..b {
            let (xm, xl) = (&rows[m], &rows[l]);
            let nm = dot(xm, xm).sqrt().max(NORM_EPS);
            let nl = dot(xl, xl).sqrt().max(NORM_EPS);
            let c = dot(xm, xl) / (nm * nl);
            // d(c^2)/dx_m = 2c * (x_l/(nm*nl) - c x_m / nm^2)
            for i in 0..n {
                grad[m * n + i] += 2.0 * c * (xl[i] / (nm * nl) - c * xm[i] / (nm * nm));
                grad[l * n + i] += 2.0 * c * (xm[i] / (nm * nl) - c * xl[i] / (nl * nl));
            }
        }
    }
    Tensor::from_vec(images.shape(), grad)
}

fn pair_cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt().max(NORM_EPS);
    let nb = dot(b, b).sqrt().max(NORM_EPS);
    dot(a, b) / (na * nb)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn spatial_dims(images: &Tensor) -> Result<(usize, usize, usize)> {
    if images.ndim() != 3 || images.shape()[1] < 1 || images.shape()[2] < 1 {
        return Err(Error::InvalidArgument(format!(
            "expected a [B, H, W] stack, got {:?}",
            images.shape()
        )));
    }
    Ok((images.shape()[0], images.shape()[1], images.shape()[2]))
}

fn plane(images: &Tensor, m: usize, h: usize, w: usize) -> &[f64] {
    &images.data()[m * h * w..(m + 1) * h * w]
}

fn flat_rows(images: &Tensor) -> Result<Vec<Vec<f64>>> {
    let (b, h, w) = spatial_dims(images)?;
    Ok((0..b).map(|m| plane(images, m, h, w).to_vec()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::BundleScope;
    use crate::numerics::SeededRng;
    use proptest::prelude::*;

    fn bundle_of(tensors: Vec<Tensor>) -> GradientBundle {
        GradientBundle {
            grads: tensors,
            scope: BundleScope::Averaged,
        }
    }

    #[test]
    fn l2_objective_basics() {
        let a = bundle_of(vec![Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap()]);
        let b = bundle_of(vec![Tensor::from_vec(&[3], vec![1.0, 2.0, 3.5]).unwrap()]);
        assert_eq!(objective_l2(&a, &a).unwrap(), 0.0);
        assert!((objective_l2(&a, &b).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(
            objective_l2(&a, &b).unwrap(),
            objective_l2(&b, &a).unwrap()
        );
    }

    #[test]
    fn cosine_objective_scale_invariance_and_extremes() {
        let mut rng = SeededRng::new(41, 0);
        let base = rng.uniform(&[12], -1.0, 1.0).unwrap();
        let observed = bundle_of(vec![base.clone()]);
        assert_eq!(objective_cosine(&observed, &observed).unwrap(), 0.0);

        for c in [0.5, 2.0, 10.0] {
            let scaled = bundle_of(vec![base.scale(c)]);
            let v = objective_cosine(&scaled, &observed).unwrap();
            assert!(v.abs() < 1e-12, "scale {c}: {v}");
        }
        let negated = bundle_of(vec![base.scale(-1.0)]);
        assert!((objective_cosine(&negated, &observed).unwrap() - 2.0).abs() < 1e-12);

        let zero = bundle_of(vec![Tensor::zeros(&[12])]);
        assert!(objective_cosine(&zero, &observed).is_err());
    }

    #[test]
    fn tv_of_constant_image_is_zero() {
        let img = Tensor::filled(&[1, 5, 5], 0.4).unwrap();
        assert_eq!(tv_penalty(&img).unwrap(), 0.0);
    }

    #[test]
    fn tv_of_single_step_edge() {
        // One vertical edge of height h between two constant halves:
        // every row crosses it once, so TV = h * H.
        let h = 0.7;
        let rows = 6;
        let img = Tensor::from_fn(&[1, rows, 4], |idx| {
            let j = idx % 4;
            if j < 2 {
                0.0
            } else {
                h
            }
        })
        .unwrap();
        let tv = tv_penalty(&img).unwrap();
        assert!((tv - h * rows as f64).abs() < 1e-12, "{tv}");
    }

    #[test]
    fn blurring_noise_reduces_tv() {
        let mut rng = SeededRng::new(42, 0);
        let noise = rng.uniform(&[1, 10, 10], 0.0, 1.0).unwrap();
        // 3x3 box blur.
        let blurred = Tensor::from_fn(&[1, 10, 10], |idx| {
            let (i, j) = (idx / 10, idx % 10);
            let mut sum = 0.0;
            let mut count = 0.0;
            for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    let (r, c) = (i as i64 + di, j as i64 + dj);
                    if (0..10).contains(&r) && (0..10).contains(&c) {
                        sum += noise.data()[(r * 10 + c) as usize];
                        count += 1.0;
                    }
                }
            }
            sum / count
        })
        .unwrap();
        assert!(tv_penalty(&blurred).unwrap() < tv_penalty(&noise).unwrap());
    }

    #[test]
    fn orth_penalty_cases() {
        let single = Tensor::from_vec(&[1, 1, 2], vec![1.0, 0.0]).unwrap();
        assert_eq!(orth_penalty(&single).unwrap(), 0.0);

        let orthogonal = Tensor::from_vec(&[2, 1, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(orth_penalty(&orthogonal).unwrap().abs() < 1e-12);

        let identical = Tensor::from_vec(&[2, 1, 2], vec![0.5, 0.5, 0.5, 0.5]).unwrap();
        assert!((orth_penalty(&identical).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn penalty_gradients_match_finite_differences() {
        let mut rng = SeededRng::new(43, 0);
        let images = rng.uniform(&[2, 4, 4], 0.1, 0.9).unwrap();

        let tv_analytic = tv_penalty_grad(&images).unwrap();
        let tv_numeric = crate::numerics::finite_diff_gradient(
            |t| tv_penalty(t).unwrap(),
            &images,
            1e-7,
        )
        .unwrap();
        // TV is piecewise linear; away from ties the subgradient is exact.
        let err = crate::numerics::max_relative_error(&tv_analytic, &tv_numeric, 1.0);
        assert!(err < 1e-6, "tv rel err {err}");

        let orth_analytic = orth_penalty_grad(&images).unwrap();
        let orth_numeric = crate::numerics::finite_diff_gradient(
            |t| orth_penalty(t).unwrap(),
            &images,
            1e-6,
        )
        .unwrap();
        let err = crate::numerics::max_relative_error(&orth_analytic, &orth_numeric, 1e-3);
        assert!(err < 1e-5, "orth rel err {err}");
    }

    proptest! {
        #[test]
        fn l2_objective_is_symmetric_and_single_entry_exact(
            base in proptest::collection::vec(-5.0f64..5.0, 8),
            delta in -3.0f64..3.0,
            idx in 0usize..8,
        ) {
            let a = bundle_of(vec![Tensor::from_vec(&[8], base.clone()).unwrap()]);
            let mut bumped = base;
            bumped[idx] += delta;
            let b = bundle_of(vec![Tensor::from_vec(&[8], bumped).unwrap()]);
            let fwd = objective_l2(&a, &b).unwrap();
            let rev = objective_l2(&b, &a).unwrap();
            prop_assert!((fwd - rev).abs() < 1e-12);
            prop_assert!((fwd - delta.abs()).abs() < 1e-12);
        }
    }
}
