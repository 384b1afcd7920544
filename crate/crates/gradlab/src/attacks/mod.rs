//! Optimization-based gradient inversion attacks.
//!
//! Three objective flavors are supported: plain Euclidean distance
//! between the candidate and observed gradient bundles; cosine distance
//! plus a total-variation penalty; and cosine distance plus total
//! variation plus a pairwise-orthogonality penalty over the candidate
//! batch. All are minimized over candidate inputs (and candidate label
//! logits when labels cannot be fixed up front) with L-BFGS.
//!
//! For the dense model the gradient of the attack objective with respect
//! to the candidates is derived by hand through the gradient-of-gradient
//! chain, which keeps dense attacks fast and exact. The convolutional
//! model falls back to forward finite differences over the candidates.

mod lbfgs;
mod objectives;

pub use lbfgs::{lbfgs_minimize, LbfgsConfig, MinimizeResult, Termination};
pub use objectives::{
    objective_cosine, objective_l2, orth_penalty, orth_penalty_grad, tv_penalty, tv_penalty_grad,
};

use crate::direct_inversion::{infer_label_distribution, Confidence};
use crate::error::{Error, Result};
use crate::models::{one_hot, softmax, BundleScope, GradientBundle, LossKind, Model};
use crate::numerics::{SeededRng, Tensor};

/// The three attack objectives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    /// Euclidean distance between bundles.
    TwoNorm,
    /// Cosine distance plus total variation.
    AngleVar,
    /// Cosine distance plus total variation plus orthogonality.
    AngleVarOrth,
}

impl AttackKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::TwoNorm => "two_norm",
            AttackKind::AngleVar => "angle_var",
            AttackKind::AngleVarOrth => "angle_var_orth",
        }
    }

    pub fn all() -> [AttackKind; 3] {
        [AttackKind::TwoNorm, AttackKind::AngleVar, AttackKind::AngleVarOrth]
    }
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How candidate labels are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Fix labels from bias-gradient inference when the loss allows it
    /// and inference is confident; otherwise optimize label logits.
    Auto,
    /// Always fix labels at the inferred values.
    FixedInferred,
    /// Always optimize label logits jointly with the inputs.
    Optimized,
}

/// Full description of one inversion attempt.
#[derive(Debug, Clone)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub lr: f64,
    pub max_iters: usize,
    pub tv_weight: f64,
    pub orth_weight: f64,
    pub label_mode: LabelMode,
    pub history_size: usize,
    pub seed: u64,
}

impl AttackConfig {
    /// Standard profile: learning rate 0.05, 550 iterations.
    pub fn standard(kind: AttackKind, seed: u64) -> AttackConfig {
        AttackConfig {
            kind,
            lr: 0.05,
            max_iters: 550,
            tv_weight: 1e-2,
            orth_weight: 1e-3,
            label_mode: LabelMode::Auto,
            history_size: 10,
            seed,
        }
    }

    /// Complementary profile: learning rate 0.025, 1200 iterations.
    pub fn long(kind: AttackKind, seed: u64) -> AttackConfig {
        AttackConfig {
            lr: 0.025,
            max_iters: 1200,
            ..AttackConfig::standard(kind, seed)
        }
    }
}

/// What the eavesdropper knows about the attacked exchange: the loss the
/// client trains with, the batch size, the input geometry, and
/// (optionally, for evaluation upper bounds) the true labels.
#[derive(Debug, Clone)]
pub struct AttackTarget {
    pub loss: LossKind,
    pub batch_size: usize,
    pub height: usize,
    pub width: usize,
    /// `Some` reveals ground-truth labels to the attack; `None` makes the
    /// attack infer or optimize them.
    pub known_labels: Option<Vec<usize>>,
}

/// Outcome of one attack run.
#[derive(Debug, Clone)]
pub struct AttackResult {
    /// `[B, H, W]` recovered inputs, clamped to `[0, 1]` for reporting.
    pub recovered: Tensor,
    /// Final label guesses (fixed or argmax of optimized logits).
    pub labels: Vec<usize>,
    /// Objective after each accepted step.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
    pub final_objective: f64,
    /// The uniform-noise starting point; the divisor image for
    /// normalized leakage metrics.
    pub initial_candidate: Tensor,
}

enum ResolvedLabels {
    Fixed(Vec<usize>),
    Optimized { init: Vec<usize> },
}

fn resolve_labels(
    observed: &GradientBundle,
    target: &AttackTarget,
    num_classes: usize,
    mode: LabelMode,
) -> ResolvedLabels {
    if let Some(known) = &target.known_labels {
        return ResolvedLabels::Fixed(known.clone());
    }
    let (gw, gb) = observed.dense_tail();
    let inference = infer_label_distribution(gb, gw, num_classes, target.batch_size);
    let mut labels = inference.labels.clone();
    // Pad up to the batch size with the most negative remaining entries.
    while labels.len() < target.batch_size {
        let mut order: Vec<usize> = (0..num_classes).collect();
        order.sort_by(|&a, &b| gb.data()[a].partial_cmp(&gb.data()[b]).expect("finite"));
        labels.push(order[labels.len() % num_classes]);
    }
    let effective = match mode {
        LabelMode::FixedInferred => LabelMode::FixedInferred,
        LabelMode::Optimized => LabelMode::Optimized,
        LabelMode::Auto => {
            if target.loss == LossKind::SoftmaxCe && inference.confidence == Confidence::High {
                LabelMode::FixedInferred
            } else {
                LabelMode::Optimized
            }
        }
    };
    match effective {
        LabelMode::FixedInferred => ResolvedLabels::Fixed(labels),
        _ => ResolvedLabels::Optimized { init: labels },
    }
}

/// Runs one gradient inversion attack against an observed bundle.
///
/// The proxy model must be the exact snapshot that produced the bundle
/// (honest-but-curious eavesdropper). Deterministic per `(config, seed)`.
pub fn run_attack(
    model: &Model,
    observed: &GradientBundle,
    target: &AttackTarget,
    config: &AttackConfig,
) -> Result<AttackResult> {
    let params = model.params();
    if params.len() != observed.grads.len()
        || params
            .iter()
            .zip(observed.grads.iter())
            .any(|(p, g)| p.shape() != g.shape())
    {
        return Err(Error::InvalidArgument(
            "observed bundle does not match the model's parameter shapes".into(),
        ));
    }
    if !matches!(observed.scope, BundleScope::Averaged) {
        return Err(Error::InvalidArgument(
            "attacks expect an averaged bundle".into(),
        ));
    }
    let (b, h, w) = (target.batch_size, target.height, target.width);
    let c = model.num_classes();

    let labels = resolve_labels(observed, target, c, config.label_mode);
    let mut rng = SeededRng::new(config.seed, 0xA77AC4);
    let x0 = rng.uniform(&[b, h, w], 0.0, 1.0)?;

    let (mut variables, fixed_onehot, optimizing) = match &labels {
        ResolvedLabels::Fixed(l) => (x0.data().to_vec(), Some(one_hot(l, c)?), false),
        ResolvedLabels::Optimized { init } => {
            let mut v = x0.data().to_vec();
            let mut z = vec![0.0; b * c];
            for (m, &l) in init.iter().enumerate().take(b) {
                z[m * c + l] = 2.0;
            }
            v.extend_from_slice(&z);
            (v, None, true)
        }
    };

    let lbfgs_config = LbfgsConfig {
        lr: config.lr,
        max_iters: config.max_iters,
        history: config.history_size,
        ..LbfgsConfig::default()
    };

    let result = match model {
        Model::Dense(dense) => {
            let problem = DenseProblem {
                weights: dense.weights.data(),
                bias: dense.bias.data(),
                n: dense.input_len(),
                c,
                b,
                h,
                w,
                loss: target.loss,
                kind: config.kind,
                tv_weight: config.tv_weight,
                orth_weight: config.orth_weight,
                observed,
                fixed_onehot: fixed_onehot.as_ref(),
            };
            lbfgs_minimize(
                |v| problem.evaluate(v, true),
                |v| problem.evaluate(v, false).0,
                &variables,
                &lbfgs_config,
            )?
        }
        Model::Lenet(_) => {
            let problem = NumericProblem {
                model,
                b,
                h,
                w,
                c,
                loss: target.loss,
                kind: config.kind,
                tv_weight: config.tv_weight,
                orth_weight: config.orth_weight,
                observed,
                fixed_onehot: fixed_onehot.as_ref(),
                step: 1e-4,
            };
            lbfgs_minimize(
                |v| problem.value_grad(v),
                |v| problem.value(v),
                &variables,
                &lbfgs_config,
            )?
        }
    };
    variables = result.x;

    let recovered = Tensor::from_vec(&[b, h, w], variables[..b * h * w].to_vec())?.clamp(0.0, 1.0);
    let final_labels = match &labels {
        ResolvedLabels::Fixed(l) => l.clone(),
        ResolvedLabels::Optimized { .. } => {
            let z = &variables[b * h * w..];
            (0..b)
                .map(|m| {
                    let row = &z[m * c..(m + 1) * c];
                    row.iter()
                        .enumerate()
                        .max_by(|(_, a), (_, b)| a.partial_cmp(b).expect("finite"))
                        .map(|(i, _)| i)
                        .unwrap_or(0)
                })
                .collect()
        }
    };
    debug_assert!(optimizing || fixed_onehot.is_some());

    Ok(AttackResult {
        recovered,
        labels: final_labels,
        objective_trace: result.trace,
        iterations: result.iterations,
        termination: result.termination,
        final_objective: result.final_value,
        initial_candidate: x0,
    })
}

// ---------------------------------------------------------------------
// Dense-model attack problem with hand-derived gradients.
// ---------------------------------------------------------------------

struct DenseProblem<'a> {
    weights: &'a [f64],
    bias: &'a [f64],
    n: usize,
    c: usize,
    b: usize,
    h: usize,
    w: usize,
    loss: LossKind,
    kind: AttackKind,
    tv_weight: f64,
    orth_weight: f64,
    observed: &'a GradientBundle,
    fixed_onehot: Option<&'a Tensor>,
}

impl DenseProblem<'_> {
    fn optimizing_labels(&self) -> bool {
        self.fixed_onehot.is_none()
    }

    /// Objective value and (optionally) its gradient with respect to the
    /// packed variable vector `[candidate pixels | label logits]`.
    fn evaluate(&self, v: &[f64], want_grad: bool) -> (f64, Vec<f64>) {
        let (n, c, b) = (self.n, self.c, self.b);
        let inv_b = 1.0 / b as f64;

        // Candidate labels per sample.
        let mut targets: Vec<Vec<f64>> = Vec::with_capacity(b);
        for m in 0..b {
            match self.fixed_onehot {
                Some(t) => targets.push(t.row(m).to_vec()),
                None => targets.push(softmax(&v[b * n + m * c..b * n + (m + 1) * c])),
            }
        }

        // Forward pass: residuals and candidate bundle.
        let mut residuals: Vec<Vec<f64>> = Vec::with_capacity(b);
        let mut probs: Vec<Vec<f64>> = Vec::with_capacity(b);
        let mut gw = vec![0.0; n * c];
        let mut gb = vec![0.0; c];
        for m in 0..b {
            let x = &v[m * n..(m + 1) * n];
            let mut logits = self.bias.to_vec();
            for i in 0..n {
                let xi = x[i];
                if xi != 0.0 {
                    let row = &self.weights[i * c..(i + 1) * c];
                    for (o, &wij) in logits.iter_mut().zip(row.iter()) {
                        *o += xi * wij;
                    }
                }
            }
            let r = crate::models::residual_row(&logits, &targets[m], self.loss);
            for (g, &rj) in gb.iter_mut().zip(r.iter()) {
                *g += rj;
            }
            for i in 0..n {
                let xi = x[i];
                if xi != 0.0 {
                    for (g, &rj) in gw[i * c..(i + 1) * c].iter_mut().zip(r.iter()) {
                        *g += xi * rj;
                    }
                }
            }
            probs.push(match self.loss {
                LossKind::Mse => Vec::new(),
                _ => softmax(&logits),
            });
            residuals.push(r);
        }
        gw.iter_mut().for_each(|g| *g *= inv_b);
        gb.iter_mut().for_each(|g| *g *= inv_b);

        let candidate = GradientBundle {
            grads: vec![
                Tensor::from_vec(&[n, c], gw).expect("finite bundle"),
                Tensor::from_vec(&[c], gb).expect("finite bundle"),
            ],
            scope: BundleScope::Averaged,
        };

        let main = match self.kind {
            AttackKind::TwoNorm => objectives::objective_l2_with_adjoint(&candidate, self.observed),
            _ => objectives::objective_cosine_with_adjoint(&candidate, self.observed),
        };
        let (mut value, adjoint) = match main {
            Ok(v) => v,
            Err(_) => return (f64::INFINITY, vec![0.0; v.len()]),
        };

        let images = Tensor::from_vec(&[b, self.h, self.w], v[..b * n].to_vec())
            .expect("candidate pixels are finite");
        if self.kind != AttackKind::TwoNorm {
            value += self.tv_weight * tv_penalty(&images).expect("spatial candidate");
        }
        if self.kind == AttackKind::AngleVarOrth {
            value += self.orth_weight * orth_penalty(&images).expect("spatial candidate");
        }
        if !want_grad {
            return (value, Vec::new());
        }

        // Backward pass through the gradient-of-gradient chain.
        let aw = adjoint[0].data();
        let ab = adjoint[1].data();
        let mut grad = vec![0.0; v.len()];
        for m in 0..b {
            let x = &v[m * n..(m + 1) * n];
            let r = &residuals[m];
            let y = &targets[m];
            let p = &probs[m];

            // s = df/dr for this sample.
            let mut s = vec![0.0; c];
            for i in 0..n {
                let xi = x[i];
                if xi != 0.0 {
                    for (sj, &a) in s.iter_mut().zip(aw[i * c..(i + 1) * c].iter()) {
                        *sj += a * xi;
                    }
                }
            }
            for (sj, &a) in s.iter_mut().zip(ab.iter()) {
                *sj += a;
            }
            s.iter_mut().for_each(|sj| *sj *= inv_b);

            let dfdo = self.residual_jacobian_transpose(&s, p, y);

            let gx = &mut grad[m * n..(m + 1) * n];
            for i in 0..n {
                let mut acc = 0.0;
                let arow = &aw[i * c..(i + 1) * c];
                let wrow = &self.weights[i * c..(i + 1) * c];
                for j in 0..c {
                    acc += inv_b * arow[j] * r[j] + wrow[j] * dfdo[j];
                }
                gx[i] = acc;
            }

            if self.optimizing_labels() {
                let dfdy = self.residual_dy_transpose(&s, p);
                // Chain through the label softmax y = softmax(z).
                let inner: f64 = y.iter().zip(dfdy.iter()).map(|(&yi, &d)| yi * d).sum();
                let gz = &mut grad[b * n + m * c..b * n + (m + 1) * c];
                for l in 0..c {
                    gz[l] = y[l] * (dfdy[l] - inner);
                }
            }
        }

        if self.kind != AttackKind::TwoNorm {
            let tvg = tv_penalty_grad(&images).expect("spatial candidate");
            for (g, &t) in grad[..b * n].iter_mut().zip(tvg.data().iter()) {
                *g += self.tv_weight * t;
            }
        }
        if self.kind == AttackKind::AngleVarOrth {
            let og = orth_penalty_grad(&images).expect("spatial candidate");
            for (g, &t) in grad[..b * n].iter_mut().zip(og.data().iter()) {
                *g += self.orth_weight * t;
            }
        }
        (value, grad)
    }

    /// `J^T s` where `J[j][l] = d r_j / d o_l` for the configured loss.
    fn residual_jacobian_transpose(&self, s: &[f64], p: &[f64], y: &[f64]) -> Vec<f64> {
        let c = self.c;
        match self.loss {
            LossKind::SoftmaxCe => {
                // dr/do is the softmax Jacobian.
                let sp: f64 = s.iter().zip(p.iter()).map(|(&a, &b)| a * b).sum();
                (0..c).map(|l| p[l] * (s[l] - sp)).collect()
            }
            LossKind::Mse => s.iter().map(|&v| 2.0 * v).collect(),
            LossKind::SoftmaxMse => {
                // r_j = 2 p_j t_j, t_j = (p_j - y_j) - q, q = sum (p-y) p.
                let q: f64 = p.iter().zip(y.iter()).map(|(&pk, &yk)| (pk - yk) * pk).sum();
                let wvec: Vec<f64> = (0..c)
                    .map(|j| {
                        let t = (p[j] - y[j]) - q;
                        (t + p[j]) * p[j]
                    })
                    .collect();
                let mm: f64 = p
                    .iter()
                    .zip(y.iter())
                    .map(|(&pk, &yk)| pk * (2.0 * pk - yk))
                    .sum();
                let sw: f64 = s.iter().zip(wvec.iter()).map(|(&a, &b)| a * b).sum();
                let sp: f64 = s.iter().zip(p.iter()).map(|(&a, &b)| a * b).sum();
                (0..c)
                    .map(|l| {
                        let u = p[l] * ((2.0 * p[l] - y[l]) - mm);
                        2.0 * (s[l] * wvec[l] - p[l] * sw - u * sp)
                    })
                    .collect()
            }
        }
    }

    /// `(dr/dy)^T s` for the configured loss.
    fn residual_dy_transpose(&self, s: &[f64], p: &[f64]) -> Vec<f64> {
        let c = self.c;
        match self.loss {
            LossKind::SoftmaxCe => s.iter().map(|&v| -v).collect(),
            LossKind::Mse => s.iter().map(|&v| -2.0 * v).collect(),
            LossKind::SoftmaxMse => {
                // dr_j/dy_l = 2 p_j (p_l - delta_jl)
                let sp: f64 = s.iter().zip(p.iter()).map(|(&a, &b)| a * b).sum();
                (0..c).map(|l| 2.0 * p[l] * (sp - s[l])).collect()
            }
        }
    }
}

// ---------------------------------------------------------------------
// Finite-difference attack problem for the convolutional model.
// ---------------------------------------------------------------------

struct NumericProblem<'a> {
    model: &'a Model,
    b: usize,
    h: usize,
    w: usize,
    c: usize,
    loss: LossKind,
    kind: AttackKind,
    tv_weight: f64,
    orth_weight: f64,
    observed: &'a GradientBundle,
    fixed_onehot: Option<&'a Tensor>,
    step: f64,
}

impl NumericProblem<'_> {
    fn value(&self, v: &[f64]) -> f64 {
        let (b, h, w, c) = (self.b, self.h, self.w, self.c);
        let pixels = b * h * w;
        let inputs = match Tensor::from_vec(&[b, h, w], v[..pixels].to_vec()) {
            Ok(t) => t,
            Err(_) => return f64::INFINITY,
        };
        let targets = match self.fixed_onehot {
            Some(t) => t.clone(),
            None => {
                let mut rows = Vec::with_capacity(b * c);
                for m in 0..b {
                    rows.extend(softmax(&v[pixels + m * c..pixels + (m + 1) * c]));
                }
                match Tensor::from_vec(&[b, c], rows) {
                    Ok(t) => t,
                    Err(_) => return f64::INFINITY,
                }
            }
        };
        let candidate = match self.model.backward_from_targets(&inputs, &targets, self.loss) {
            Ok((_, bundle)) => bundle,
            Err(_) => return f64::INFINITY,
        };
        let main = match self.kind {
            AttackKind::TwoNorm => objective_l2(&candidate, self.observed),
            _ => objective_cosine(&candidate, self.observed),
        };
        let mut value = match main {
            Ok(v) => v,
            Err(_) => return f64::INFINITY,
        };
        if self.kind != AttackKind::TwoNorm {
            value += self.tv_weight * tv_penalty(&inputs).expect("spatial candidate");
        }
        if self.kind == AttackKind::AngleVarOrth {
            value += self.orth_weight * orth_penalty(&inputs).expect("spatial candidate");
        }
        value
    }

    /// Forward-difference gradient over every packed variable.
    fn value_grad(&self, v: &[f64]) -> (f64, Vec<f64>) {
        let base = self.value(v);
        if !base.is_finite() {
            return (base, vec![0.0; v.len()]);
        }
        let mut probe = v.to_vec();
        let mut grad = vec![0.0; v.len()];
        for i in 0..v.len() {
            let orig = probe[i];
            probe[i] = orig + self.step;
            grad[i] = (self.value(&probe) - base) / self.step;
            probe[i] = orig;
        }
        (base, grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{Batch, SamplingStrategy};
    use crate::models::DenseModel;
    use crate::numerics::{finite_diff_gradient, max_relative_error};

    fn batch_from(inputs: Tensor, labels: Vec<usize>) -> Batch {
        let indices = (0..labels.len()).collect();
        Batch {
            inputs,
            labels,
            indices,
            strategy: SamplingStrategy::RandomLabels,
        }
    }

    fn dense_setup(
        seed: u64,
        b: usize,
        loss: LossKind,
    ) -> (Model, GradientBundle, Batch, usize, usize) {
        let (h, w, c) = (3, 4, 5);
        let mut rng = SeededRng::new(seed, 0);
        let model = Model::Dense(DenseModel::init_uniform(h * w, c, &mut rng));
        let inputs = rng.uniform(&[b, h, w], 0.0, 1.0).unwrap();
        let labels: Vec<usize> = (0..b).map(|_| rng.index(c)).collect();
        let batch = batch_from(inputs, labels);
        let (_, bundle) = model.backward(&batch, loss).unwrap();
        (model, bundle, batch, h, w)
    }

    #[test]
    fn dense_attack_gradients_match_finite_differences() {
        for loss in [LossKind::SoftmaxCe, LossKind::Mse, LossKind::SoftmaxMse] {
            for kind in AttackKind::all() {
                for optimized in [false, true] {
                    let (model, bundle, batch, h, w) = dense_setup(61, 2, loss);
                    let Model::Dense(dense) = &model else { unreachable!() };
                    let fixed = one_hot(&batch.labels, 5).unwrap();
                    let problem = DenseProblem {
                        weights: dense.weights.data(),
                        bias: dense.bias.data(),
                        n: h * w,
                        c: 5,
                        b: 2,
                        h,
                        w,
                        loss,
                        kind,
                        tv_weight: 1e-2,
                        orth_weight: 1e-3,
                        observed: &bundle,
                        fixed_onehot: if optimized { None } else { Some(&fixed) },
                    };
                    let mut rng = SeededRng::new(62, 0);
                    let dim = 2 * h * w + if optimized { 2 * 5 } else { 0 };
                    let v0 = rng.uniform(&[dim], 0.05, 0.95).unwrap();
                    let (_, analytic) = problem.evaluate(v0.data(), true);
                    let analytic = Tensor::from_vec(&[dim], analytic).unwrap();
                    let numeric = finite_diff_gradient(
                        |t| problem.evaluate(t.data(), false).0,
                        &v0,
                        1e-6,
                    )
                    .unwrap();
                    let err = max_relative_error(&analytic, &numeric, 1e-3);
                    assert!(
                        err < 1e-4,
                        "loss {loss} kind {kind} optimized {optimized}: rel err {err}"
                    );
                }
            }
        }
    }

    #[test]
    fn objective_is_zero_at_ground_truth() {
        for loss in [LossKind::SoftmaxCe, LossKind::Mse, LossKind::SoftmaxMse] {
            for kind in AttackKind::all() {
                let (model, bundle, batch, h, w) = dense_setup(63, 2, loss);
                let Model::Dense(dense) = &model else { unreachable!() };
                let fixed = one_hot(&batch.labels, 5).unwrap();
                let problem = DenseProblem {
                    weights: dense.weights.data(),
                    bias: dense.bias.data(),
                    n: h * w,
                    c: 5,
                    b: 2,
                    h,
                    w,
                    loss,
                    kind,
                    tv_weight: 0.0,
                    orth_weight: 0.0,
                    observed: &bundle,
                    fixed_onehot: Some(&fixed),
                };
                let truth = batch.inputs.data().to_vec();
                let (value, _) = problem.evaluate(&truth, false);
                assert!(value.abs() < 1e-12, "loss {loss} kind {kind}: {value}");
            }
        }
    }

    #[test]
    fn attack_is_deterministic_per_seed() {
        let (model, bundle, _, h, w) = dense_setup(64, 2, LossKind::SoftmaxCe);
        let target = AttackTarget {
            loss: LossKind::SoftmaxCe,
            batch_size: 2,
            height: h,
            width: w,
            known_labels: None,
        };
        let mut config = AttackConfig::standard(AttackKind::TwoNorm, 99);
        config.max_iters = 30;
        let a = run_attack(&model, &bundle, &target, &config).unwrap();
        let b = run_attack(&model, &bundle, &target, &config).unwrap();
        assert_eq!(a.recovered, b.recovered);
        assert_eq!(a.objective_trace, b.objective_trace);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn attack_rejects_mismatched_bundle() {
        let (model, _, _, h, w) = dense_setup(65, 1, LossKind::SoftmaxCe);
        let wrong = GradientBundle {
            grads: vec![Tensor::zeros(&[3, 3]), Tensor::zeros(&[3])],
            scope: BundleScope::Averaged,
        };
        let target = AttackTarget {
            loss: LossKind::SoftmaxCe,
            batch_size: 1,
            height: h,
            width: w,
            known_labels: None,
        };
        let config = AttackConfig::standard(AttackKind::TwoNorm, 1);
        assert!(run_attack(&model, &wrong, &target, &config).is_err());
    }

    #[test]
    fn single_sample_attack_recovers_input() {
        let (model, bundle, batch, h, w) = dense_setup(66, 1, LossKind::SoftmaxCe);
        let target = AttackTarget {
            loss: LossKind::SoftmaxCe,
            batch_size: 1,
            height: h,
            width: w,
            known_labels: None,
        };
        let mut config = AttackConfig::standard(AttackKind::TwoNorm, 5);
        config.max_iters = 300;
        let result = run_attack(&model, &bundle, &target, &config).unwrap();
        assert_eq!(result.labels, batch.labels);
        let err: f64 = result
            .recovered
            .data()
            .iter()
            .zip(batch.inputs.data().iter())
            .map(|(&a, &b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 0.05, "max abs recovery error {err}");
        for pair in result.objective_trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-15);
        }
    }

    #[test]
    fn lenet_attack_runs_and_descends() {
        let mut rng = SeededRng::new(67, 0);
        let model = Model::Lenet(
            crate::models::LeNetModel::init(8, 8, 3, 1, 4, &mut rng).unwrap(),
        );
        let inputs = rng.uniform(&[1, 8, 8], 0.0, 1.0).unwrap();
        let batch = batch_from(inputs, vec![2]);
        let (_, bundle) = model.backward(&batch, LossKind::SoftmaxCe).unwrap();
        let target = AttackTarget {
            loss: LossKind::SoftmaxCe,
            batch_size: 1,
            height: 8,
            width: 8,
            known_labels: None,
        };
        let mut config = AttackConfig::standard(AttackKind::AngleVar, 3);
        config.max_iters = 15;
        let result = run_attack(&model, &bundle, &target, &config).unwrap();
        assert!(result.iterations > 0);
        let first = result.objective_trace.first().copied().unwrap();
        let last = result.final_objective;
        assert!(last < first, "objective did not descend: {first} -> {last}");
    }
}
