//! Limited-memory BFGS with two-loop recursion and Armijo backtracking.
//!
//! Each iteration starts the line search at the configured learning rate
//! and halves until the sufficient-decrease condition holds, so the
//! accepted objective trace is strictly non-increasing. Curvature pairs
//! are only stored when `s.y` is safely positive.

use crate::error::{Error, Result};
use crate::numerics::dot;

#[derive(Debug, Clone, Copy)]
pub struct LbfgsConfig {
    /// Initial trial step length of every line search.
    pub lr: f64,
    pub max_iters: usize,
    /// Number of curvature pairs kept.
    pub history: usize,
    /// Stop when the gradient norm falls below this.
    pub grad_tol: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo_c: f64,
    /// Maximum step halvings per line search.
    pub max_halvings: u32,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            lr: 0.05,
            max_iters: 550,
            history: 10,
            grad_tol: 1e-10,
            armijo_c: 1e-4,
            max_halvings: 20,
        }
    }
}

/// Why the minimizer stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    MaxIterations,
    GradientConverged,
    LineSearchFailed,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::MaxIterations => "max_iterations",
            Termination::GradientConverged => "gradient_converged",
            Termination::LineSearchFailed => "line_search_failed",
        }
    }
}

#[derive(Debug, Clone)]
pub struct MinimizeResult {
    pub x: Vec<f64>,
    /// Objective after each accepted step.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
    pub final_value: f64,
    pub final_grad_norm: f64,
}

/// Minimizes `f` starting from `x0`. `value_grad` returns the objective
/// and its gradient; `value` alone is used inside the line search, where
/// the gradient would be wasted work.
pub fn lbfgs_minimize(
    mut value_grad: impl FnMut(&[f64]) -> (f64, Vec<f64>),
    mut value: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    config: &LbfgsConfig,
) -> Result<MinimizeResult> {
    let dim = x0.len();
    let mut x = x0.to_vec();
    let (mut fx, mut grad) = value_grad(&x);
    if !fx.is_finite() {
        return Err(Error::NonFiniteObjective);
    }

    let mut history: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::new(); // (s, y, rho)
    let mut trace = Vec::new();
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;

    for _ in 0..config.max_iters {
        let grad_norm = dot(&grad, &grad).sqrt();
        if grad_norm < config.grad_tol {
            termination = Termination::GradientConverged;
            break;
        }

        let mut direction = two_loop_direction(&grad, &history);
        let mut slope = dot(&grad, &direction);
        if slope >= 0.0 {
            // Curvature information went stale; fall back to steepest
            // descent.
            history.clear();
            direction = grad.iter().map(|&g| -g).collect();
            slope = -dot(&grad, &grad);
        }

        let mut alpha = config.lr;
        let mut accepted: Option<(Vec<f64>, f64)> = None;
        for _ in 0..=config.max_halvings {
            let candidate: Vec<f64> = (0..dim).map(|i| x[i] + alpha * direction[i]).collect();
            let fc = value(&candidate);
            if fc.is_finite() && fc <= fx + config.armijo_c * alpha * slope {
                accepted = Some((candidate, fc));
                break;
            }
            alpha *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            termination = Termination::LineSearchFailed;
            break;
        };

        let (f_check, grad_new) = value_grad(&x_new);
        // Re-evaluating at the accepted point keeps f and grad consistent.
        let f_new = if f_check.is_finite() { f_check } else { f_new };

        let s: Vec<f64> = (0..dim).map(|i| x_new[i] - x[i]).collect();
        let y: Vec<f64> = (0..dim).map(|i| grad_new[i] - grad[i]).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * dot(&s, &s).max(f64::MIN_POSITIVE) {
            if history.len() == config.history {
                history.remove(0);
            }
            history.push((s, y, 1.0 / sy));
        } else if !history.is_empty() {
            // Armijo-only steps can land where curvature along the step
            // is not positive; the stored pairs then describe a region
            // the iterate has left. Aging out the oldest pair keeps the
            // inverse-Hessian model fresh instead of freezing it.
            history.remove(0);
        }

        x = x_new;
        fx = f_new;
        grad = grad_new;
        iterations += 1;
        trace.push(fx);
    }

    let final_grad_norm = dot(&grad, &grad).sqrt();
    if termination == Termination::MaxIterations && final_grad_norm < config.grad_tol {
        termination = Termination::GradientConverged;
    }
    Ok(MinimizeResult {
        x,
        trace,
        iterations,
        termination,
        final_value: fx,
        final_grad_norm,
    })
}

/// Two-loop recursion: approximates `-H * grad` from stored curvature
/// pairs, scaling the seed matrix by `s.y / y.y` of the newest pair.
fn two_loop_direction(grad: &[f64], history: &[(Vec<f64>, Vec<f64>, f64)]) -> Vec<f64> {
    let mut q = grad.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y.iter()) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.last() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s.iter()) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;

    #[test]
    fn quadratic_converges_quickly() {
        let mut rng = SeededRng::new(31, 0);
        let target = rng.uniform(&[10], -2.0, 2.0).unwrap();
        let a = target.data().to_vec();
        let f = |x: &[f64]| -> f64 { x.iter().zip(a.iter()).map(|(x, t)| (x - t) * (x - t)).sum() };
        let fg = |x: &[f64]| -> (f64, Vec<f64>) {
            (
                f(x),
                x.iter().zip(a.iter()).map(|(x, t)| 2.0 * (x - t)).collect(),
            )
        };
        let config = LbfgsConfig {
            lr: 1.0,
            max_iters: 50,
            grad_tol: 1e-12,
            ..LbfgsConfig::default()
        };
        let result = lbfgs_minimize(fg, f, &vec![0.0; 10], &config).unwrap();
        let dist: f64 = result
            .x
            .iter()
            .zip(a.iter())
            .map(|(x, t)| (x - t) * (x - t))
            .sum::<f64>()
            .sqrt();
        assert!(dist < 1e-8, "distance {dist} after {} iters", result.iterations);
        assert!(result.iterations <= 50);
    }

    #[test]
    fn rosenbrock_reaches_minimum() {
        let f = |x: &[f64]| -> f64 {
            let (a, b) = (x[0], x[1]);
            (1.0 - a) * (1.0 - a) + 100.0 * (b - a * a) * (b - a * a)
        };
        let fg = |x: &[f64]| -> (f64, Vec<f64>) {
            let (a, b) = (x[0], x[1]);
            let g0 = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            let g1 = 200.0 * (b - a * a);
            (f(x), vec![g0, g1])
        };
        let config = LbfgsConfig {
            lr: 1.0,
            max_iters: 500,
            grad_tol: 1e-12,
            ..LbfgsConfig::default()
        };
        let result = lbfgs_minimize(fg, f, &[-1.2, 1.0], &config).unwrap();
        assert!(result.final_value < 1e-6, "f = {}", result.final_value);
    }

    #[test]
    fn zero_gradient_start_returns_immediately() {
        let f = |_: &[f64]| -> f64 { 3.0 };
        let fg = |_: &[f64]| -> (f64, Vec<f64>) { (3.0, vec![0.0, 0.0]) };
        let result = lbfgs_minimize(fg, f, &[1.0, 2.0], &LbfgsConfig::default()).unwrap();
        assert_eq!(result.iterations, 0);
        assert_eq!(result.termination, Termination::GradientConverged);
        assert_eq!(result.x, vec![1.0, 2.0]);
    }

    #[test]
    fn trace_is_non_increasing() {
        let mut rng = SeededRng::new(32, 0);
        let target = rng.uniform(&[6], -1.0, 1.0).unwrap();
        let a = target.data().to_vec();
        let f = |x: &[f64]| -> f64 {
            x.iter()
                .zip(a.iter())
                .map(|(x, t)| (x - t) * (x - t) + 0.3 * (x - t).powi(4))
                .sum()
        };
        let fg = |x: &[f64]| -> (f64, Vec<f64>) {
            (
                f(x),
                x.iter()
                    .zip(a.iter())
                    .map(|(x, t)| 2.0 * (x - t) + 1.2 * (x - t).powi(3))
                    .collect(),
            )
        };
        let config = LbfgsConfig {
            lr: 0.05,
            max_iters: 100,
            ..LbfgsConfig::default()
        };
        let result = lbfgs_minimize(fg, f, &vec![2.0; 6], &config).unwrap();
        for pair in result.trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-15);
        }
        assert!(result.trace.len() <= 100);
    }

    #[test]
    fn non_finite_start_is_an_error() {
        let f = |_: &[f64]| -> f64 { f64::NAN };
        let fg = |_: &[f64]| -> (f64, Vec<f64>) { (f64::NAN, vec![0.0]) };
        assert!(lbfgs_minimize(fg, f, &[0.0], &LbfgsConfig::default()).is_err());
    }
}
