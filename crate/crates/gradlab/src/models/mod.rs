//! The two studied networks (single dense layer, small LeNet-style CNN)
//! with hand-derived backpropagation for three loss configurations.
//!
//! Gradients come out as [`GradientBundle`]s: per-parameter tensors in a
//! fixed declaration order, either averaged over the batch (what a
//! federated client would share) or stacked per sample.

mod dense;
mod lenet;
mod loss;
mod snapshot;

pub use dense::DenseModel;
pub use lenet::LeNetModel;
pub use loss::{loss, one_hot, softmax, LossKind};
pub use snapshot::{load_bundle, load_model, save_bundle, save_model};

pub(crate) use dense::flatten_inputs;
pub(crate) use loss::{loss_value_row, residual_row};
pub(crate) use snapshot as snapshot_bytes;

use crate::datasets::Batch;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Whether bundle tensors are batch means or carry a leading sample axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BundleScope {
    Averaged,
    PerSample(usize),
}

/// Per-parameter gradients in declaration order; the object a federated
/// client shares and an eavesdropper attacks.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub grads: Vec<Tensor>,
    pub scope: BundleScope,
}

impl GradientBundle {
    /// Collapses a per-sample bundle to the batch mean; an averaged
    /// bundle is returned unchanged.
    pub fn mean(&self) -> GradientBundle {
        match self.scope {
            BundleScope::Averaged => self.clone(),
            BundleScope::PerSample(b) => {
                let grads = self
                    .grads
                    .iter()
                    .map(|t| {
                        let inner: usize = t.shape()[1..].iter().product();
                        let mut acc = vec![0.0; inner];
                        for m in 0..b {
                            for (a, &v) in acc.iter_mut().zip(&t.data()[m * inner..(m + 1) * inner])
                            {
                                *a += v;
                            }
                        }
                        let scale = 1.0 / b as f64;
                        for a in acc.iter_mut() {
                            *a *= scale;
                        }
                        Tensor::from_vec(&t.shape()[1..], acc).expect("finite mean")
                    })
                    .collect();
                GradientBundle {
                    grads,
                    scope: BundleScope::Averaged,
                }
            }
        }
    }

    pub fn same_shapes(&self, other: &GradientBundle) -> bool {
        self.grads.len() == other.grads.len()
            && self
                .grads
                .iter()
                .zip(other.grads.iter())
                .all(|(a, b)| a.shape() == b.shape())
    }

    /// All entries concatenated in declaration order.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.grads.iter().map(Tensor::len).sum());
        for t in &self.grads {
            out.extend_from_slice(t.data());
        }
        out
    }

    pub fn l2_norm(&self) -> f64 {
        self.grads
            .iter()
            .map(|t| t.data().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// The final dense layer's `(weight, bias)` gradients; by declaration
    /// order these are always the last two tensors.
    pub fn dense_tail(&self) -> (&Tensor, &Tensor) {
        let n = self.grads.len();
        (&self.grads[n - 2], &self.grads[n - 1])
    }
}

/// A model snapshot: either of the two studied architectures.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Dense(DenseModel),
    Lenet(LeNetModel),
}

impl Model {
    pub fn num_classes(&self) -> usize {
        match self {
            Model::Dense(d) => d.num_classes(),
            Model::Lenet(l) => l.num_classes(),
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Model::Dense(d) => vec![&d.weights, &d.bias],
            Model::Lenet(l) => vec![
                &l.conv1_w, &l.conv1_b, &l.conv2_w, &l.conv2_b, &l.fc_w, &l.fc_b,
            ],
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Model::Dense(d) => vec![&mut d.weights, &mut d.bias],
            Model::Lenet(l) => vec![
                &mut l.conv1_w,
                &mut l.conv1_b,
                &mut l.conv2_w,
                &mut l.conv2_b,
                &mut l.fc_w,
                &mut l.fc_b,
            ],
        }
    }

    /// Logits `[B, C]` for a batch of inputs (`[B, H, W]`, or `[B, n]`
    /// for the dense model).
    pub fn forward(&self, inputs: &Tensor) -> Result<Tensor> {
        match self {
            Model::Dense(d) => d.forward(inputs),
            Model::Lenet(l) => l.forward(inputs),
        }
    }

    /// Mean loss and batch-averaged gradients for integer labels.
    pub fn backward(&self, batch: &Batch, kind: LossKind) -> Result<(f64, GradientBundle)> {
        let targets = one_hot(&batch.labels, self.num_classes())?;
        self.backward_from_targets(&batch.inputs, &targets, kind)
    }

    /// Per-sample losses and a per-sample gradient bundle.
    pub fn backward_per_sample(
        &self,
        batch: &Batch,
        kind: LossKind,
    ) -> Result<(Vec<f64>, GradientBundle)> {
        let targets = one_hot(&batch.labels, self.num_classes())?;
        let (losses, per_sample) = self.per_sample_grads(&batch.inputs, &targets, kind)?;
        Ok((losses, per_sample))
    }

    /// Mean loss and averaged gradients against (possibly soft) target
    /// rows. Soft targets are what a label-optimizing attack feeds in.
    pub fn backward_from_targets(
        &self,
        inputs: &Tensor,
        targets: &Tensor,
        kind: LossKind,
    ) -> Result<(f64, GradientBundle)> {
        match self {
            Model::Dense(d) => dense_backward(d, inputs, targets, kind),
            Model::Lenet(l) => {
                let (losses, per_sample) = lenet_per_sample(l, inputs, targets, kind)?;
                let mean = losses.iter().sum::<f64>() / losses.len() as f64;
                Ok((mean, per_sample.mean()))
            }
        }
    }

    fn per_sample_grads(
        &self,
        inputs: &Tensor,
        targets: &Tensor,
        kind: LossKind,
    ) -> Result<(Vec<f64>, GradientBundle)> {
        match self {
            Model::Dense(d) => dense_per_sample(d, inputs, targets, kind),
            Model::Lenet(l) => lenet_per_sample(l, inputs, targets, kind),
        }
    }

    /// One SGD step: every parameter decremented by `gamma * gradient`.
    pub fn sgd_step(&mut self, bundle: &GradientBundle, gamma: f64) -> Result<()> {
        if !matches!(bundle.scope, BundleScope::Averaged) {
            return Err(Error::InvalidArgument(
                "sgd_step needs an averaged bundle".into(),
            ));
        }
        let params = self.params_mut();
        if params.len() != bundle.grads.len() {
            return Err(Error::InvalidArgument(format!(
                "bundle has {} tensors, model has {}",
                bundle.grads.len(),
                params.len()
            )));
        }
        for (p, g) in params.into_iter().zip(bundle.grads.iter()) {
            p.add_scaled(g, -gamma)?;
        }
        Ok(())
    }
}

fn dense_backward(
    model: &DenseModel,
    inputs: &Tensor,
    targets: &Tensor,
    kind: LossKind,
) -> Result<(f64, GradientBundle)> {
    let flat = flatten_inputs(inputs, model.input_len())?;
    let (b, n, c) = (flat.shape()[0], model.input_len(), model.num_classes());
    check_targets(targets, b, c)?;

    let mut grad_w = vec![0.0; n * c];
    let mut grad_b = vec![0.0; c];
    let mut total_loss = 0.0;
    for m in 0..b {
        let x = flat.row(m);
        let logits = model.logits_row(x);
        let y = targets.row(m);
        total_loss += loss_value_row(&logits, y, kind);
        let r = residual_row(&logits, y, kind);
        for (gb, &rj) in grad_b.iter_mut().zip(r.iter()) {
            *gb += rj;
        }
        for i in 0..n {
            let xi = x[i];
            if xi != 0.0 {
                let row = &mut grad_w[i * c..(i + 1) * c];
                for (g, &rj) in row.iter_mut().zip(r.iter()) {
                    *g += xi * rj;
                }
            }
        }
    }
    let scale = 1.0 / b as f64;
    for g in grad_w.iter_mut() {
        *g *= scale;
    }
    for g in grad_b.iter_mut() {
        *g *= scale;
    }
    Ok((
        total_loss * scale,
        GradientBundle {
            grads: vec![
                Tensor::from_vec(&[n, c], grad_w)?,
                Tensor::from_vec(&[c], grad_b)?,
            ],
            scope: BundleScope::Averaged,
        },
    ))
}

fn dense_per_sample(
    model: &DenseModel,
    inputs: &Tensor,
    targets: &Tensor,
    kind: LossKind,
) -> Result<(Vec<f64>, GradientBundle)> {
    let flat = flatten_inputs(inputs, model.input_len())?;
    let (b, n, c) = (flat.shape()[0], model.input_len(), model.num_classes());
    check_targets(targets, b, c)?;

    let mut grad_w = vec![0.0; b * n * c];
    let mut grad_b = vec![0.0; b * c];
    let mut losses = Vec::with_capacity(b);
    for m in 0..b {
        let x = flat.row(m);
        let logits = model.logits_row(x);
        let y = targets.row(m);
        losses.push(loss_value_row(&logits, y, kind));
        let r = residual_row(&logits, y, kind);
        grad_b[m * c..(m + 1) * c].copy_from_slice(&r);
        let gw = &mut grad_w[m * n * c..(m + 1) * n * c];
        for i in 0..n {
            let xi = x[i];
            if xi != 0.0 {
                for (g, &rj) in gw[i * c..(i + 1) * c].iter_mut().zip(r.iter()) {
                    *g = xi * rj;
                }
            }
        }
    }
    Ok((
        losses,
        GradientBundle {
            grads: vec![
                Tensor::from_vec(&[b, n, c], grad_w)?,
                Tensor::from_vec(&[b, c], grad_b)?,
            ],
            scope: BundleScope::PerSample(b),
        },
    ))
}

fn lenet_per_sample(
    model: &LeNetModel,
    inputs: &Tensor,
    targets: &Tensor,
    kind: LossKind,
) -> Result<(Vec<f64>, GradientBundle)> {
    let b = model.check_inputs(inputs)?;
    check_targets(targets, b, model.num_classes())?;

    let mut losses = Vec::with_capacity(b);
    let mut stacked: Option<Vec<(Vec<usize>, Vec<f64>)>> = None;
    for m in 0..b {
        let cache = model.forward_sample(lenet::sample_slice(inputs, m));
        let y = targets.row(m);
        losses.push(loss_value_row(&cache.logits, y, kind));
        let r = residual_row(&cache.logits, y, kind);
        let grads = model.backward_sample(&cache, &r);
        match stacked.as_mut() {
            None => {
                stacked = Some(
                    grads
                        .into_iter()
                        .map(|t| {
                            let mut shape = vec![b];
                            shape.extend_from_slice(t.shape());
                            let mut data = Vec::with_capacity(b * t.len());
                            data.extend_from_slice(t.data());
                            (shape, data)
                        })
                        .collect(),
                );
            }
            Some(acc) => {
                for ((_, data), t) in acc.iter_mut().zip(grads.into_iter()) {
                    data.extend_from_slice(t.data());
                }
            }
        }
    }
    let grads = stacked
        .expect("batch is non-empty")
        .into_iter()
        .map(|(shape, data)| Tensor::from_vec(&shape, data))
        .collect::<Result<Vec<_>>>()?;
    Ok((
        losses,
        GradientBundle {
            grads,
            scope: BundleScope::PerSample(b),
        },
    ))
}

fn check_targets(targets: &Tensor, b: usize, c: usize) -> Result<()> {
    if targets.ndim() != 2 || targets.shape()[0] != b || targets.shape()[1] != c {
        return Err(Error::ShapeMismatch {
            expected: vec![b, c],
            got: targets.shape().to_vec(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::SamplingStrategy;
    use crate::numerics::{finite_diff_gradient, max_relative_error, SeededRng};

    fn batch_from(inputs: Tensor, labels: Vec<usize>) -> Batch {
        let indices = (0..labels.len()).collect();
        Batch {
            inputs,
            labels,
            indices,
            strategy: SamplingStrategy::RandomLabels,
        }
    }

    #[test]
    fn forward_zero_model_gives_zero_logits() {
        let model = Model::Dense(DenseModel::zeros(4, 3));
        let inputs = Tensor::from_vec(&[1, 2, 2], vec![0.3, 0.5, 0.1, 0.9]).unwrap();
        let logits = model.forward(&inputs).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_hand_sum() {
        let w = Tensor::from_vec(&[2, 1], vec![1.0, 1.0]).unwrap();
        let b = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        let model = DenseModel::new(w, b).unwrap();
        let x = Tensor::from_vec(&[1, 2], vec![2.0, 3.0]).unwrap();
        let o = model.forward(&x).unwrap();
        assert_eq!(o.data(), &[6.0]);
    }

    #[test]
    fn zero_weight_softmax_ce_gradients() {
        let model = Model::Dense(DenseModel::zeros(2, 2));
        let batch = batch_from(Tensor::from_vec(&[1, 1, 2], vec![1.0, 2.0]).unwrap(), vec![0]);
        let (_, bundle) = model.backward(&batch, LossKind::SoftmaxCe).unwrap();
        let grad_w = &bundle.grads[0];
        let grad_b = &bundle.grads[1];
        assert_eq!(grad_b.data(), &[-0.5, 0.5]);
        assert_eq!(grad_w.at2(0, 0), -0.5);
        assert_eq!(grad_w.at2(1, 0), -1.0);
    }

    #[test]
    fn averaged_bundle_is_mean_of_per_sample() {
        let mut rng = SeededRng::new(21, 0);
        let model = Model::Dense(DenseModel::init_uniform(6, 4, &mut rng));
        let inputs = rng.uniform(&[2, 6], 0.0, 1.0).unwrap();
        let batch = batch_from(inputs.reshape(&[2, 2, 3]).unwrap(), vec![1, 3]);
        let (_, averaged) = model.backward(&batch, LossKind::SoftmaxCe).unwrap();
        let (_, per_sample) = model.backward_per_sample(&batch, LossKind::SoftmaxCe).unwrap();
        let collapsed = per_sample.mean();
        for (a, b) in averaged.grads.iter().zip(collapsed.grads.iter()) {
            let diff = a.sub(b).unwrap();
            assert!(crate::numerics::l2_norm(&diff) < 1e-15);
        }
    }

    #[test]
    fn two_half_steps_equal_one_full_step() {
        let mut rng = SeededRng::new(3, 0);
        let model = Model::Dense(DenseModel::init_uniform(5, 3, &mut rng));
        let inputs = rng.uniform(&[1, 5], 0.0, 1.0).unwrap();
        let batch = batch_from(inputs.reshape(&[1, 1, 5]).unwrap(), vec![2]);
        let (_, bundle) = model.backward(&batch, LossKind::Mse).unwrap();

        let mut half = model.clone();
        half.sgd_step(&bundle, 0.05).unwrap();
        half.sgd_step(&bundle, 0.05).unwrap();
        let mut full = model.clone();
        full.sgd_step(&bundle, 0.1).unwrap();
        for (a, b) in half.params().iter().zip(full.params().iter()) {
            let diff = a.sub(b).unwrap();
            assert!(crate::numerics::l2_norm(&diff) < 1e-12);
        }

        let mut unchanged = model.clone();
        unchanged.sgd_step(&bundle, 0.0).unwrap();
        assert_eq!(unchanged, model);
    }

    #[test]
    fn sgd_step_decreases_loss() {
        let mut rng = SeededRng::new(8, 0);
        for kind in [LossKind::SoftmaxCe, LossKind::Mse, LossKind::SoftmaxMse] {
            let mut model = Model::Dense(DenseModel::init_uniform(10, 4, &mut rng));
            let inputs = rng.uniform(&[3, 10], 0.0, 1.0).unwrap();
            let batch = batch_from(inputs.reshape(&[3, 2, 5]).unwrap(), vec![0, 1, 2]);
            let (before, bundle) = model.backward(&batch, kind).unwrap();
            model.sgd_step(&bundle, 1e-3).unwrap();
            let (after, _) = model.backward(&batch, kind).unwrap();
            assert!(after < before, "{kind}: {after} !< {before}");
        }
    }

    #[test]
    fn lenet_forward_shape() {
        let mut rng = SeededRng::new(4, 0);
        let model = LeNetModel::init(28, 28, 5, 2, 10, &mut rng).unwrap();
        let inputs = rng.uniform(&[3, 28, 28], 0.0, 1.0).unwrap();
        let logits = model.forward(&inputs).unwrap();
        assert_eq!(logits.shape(), &[3, 10]);
        assert!(logits.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn lenet_rejects_too_small_input() {
        let mut rng = SeededRng::new(4, 1);
        assert!(LeNetModel::init(8, 8, 5, 1, 10, &mut rng).is_err());
        assert!(LeNetModel::init(8, 8, 3, 1, 10, &mut rng).is_ok());
    }

    /// Replaces model parameters with the values in `flat`, preserving
    /// shapes, and returns the batch-mean loss. Drives the oracle checks.
    fn loss_at_params(model: &Model, flat: &Tensor, batch: &Batch, kind: LossKind) -> f64 {
        let mut m = model.clone();
        let mut offset = 0;
        for p in m.params_mut() {
            let len = p.len();
            p.data_mut().copy_from_slice(&flat.data()[offset..offset + len]);
            offset += len;
        }
        let (l, _) = m.backward(batch, kind).unwrap();
        l
    }

    fn params_flat(model: &Model) -> Tensor {
        let mut data = Vec::new();
        for p in model.params() {
            data.extend_from_slice(p.data());
        }
        Tensor::from_vec(&[data.len()], data).unwrap()
    }

    #[test]
    fn dense_gradients_match_finite_differences() {
        let mut rng = SeededRng::new(77, 0);
        for trial in 0..6 {
            let n = 3 + rng.index(8);
            let c = 2 + rng.index(5);
            let b = 1 + rng.index(3);
            let model = Model::Dense(DenseModel::init_uniform(n, c, &mut rng));
            let inputs = rng.uniform(&[b, n], 0.0, 1.0).unwrap();
            let labels: Vec<usize> = (0..b).map(|_| rng.index(c)).collect();
            let batch = batch_from(inputs.reshape(&[b, 1, n]).unwrap(), labels);
            for kind in [LossKind::SoftmaxCe, LossKind::Mse, LossKind::SoftmaxMse] {
                let (_, bundle) = model.backward(&batch, kind).unwrap();
                let analytic = Tensor::from_vec(&[bundle.flat().len()], bundle.flat()).unwrap();
                let numeric = finite_diff_gradient(
                    |flat| loss_at_params(&model, flat, &batch, kind),
                    &params_flat(&model),
                    1e-5,
                )
                .unwrap();
                let err = max_relative_error(&analytic, &numeric, 1e-4);
                assert!(err < 1e-5, "trial {trial} {kind}: rel err {err}");
            }
        }
    }

    #[test]
    fn lenet_gradients_match_finite_differences() {
        let mut rng = SeededRng::new(78, 0);
        let model = Model::Lenet(LeNetModel::init(8, 8, 3, 1, 4, &mut rng).unwrap());
        let inputs = rng.uniform(&[2, 8, 8], 0.0, 1.0).unwrap();
        let batch = batch_from(inputs, vec![0, 3]);
        for kind in [LossKind::SoftmaxCe, LossKind::Mse, LossKind::SoftmaxMse] {
            let (_, bundle) = model.backward(&batch, kind).unwrap();
            let analytic = Tensor::from_vec(&[bundle.flat().len()], bundle.flat()).unwrap();
            let numeric = finite_diff_gradient(
                |flat| loss_at_params(&model, flat, &batch, kind),
                &params_flat(&model),
                1e-5,
            )
            .unwrap();
            let err = max_relative_error(&analytic, &numeric, 1e-4);
            assert!(err < 1e-5, "{kind}: rel err {err}");
        }
    }

    #[test]
    fn single_sample_ratio_identity() {
        // For one softmax cross-entropy sample the weight-gradient column
        // divided by the bias gradient reproduces the input exactly.
        let mut rng = SeededRng::new(79, 0);
        let model = Model::Dense(DenseModel::init_uniform(7, 5, &mut rng));
        let inputs = rng.uniform(&[1, 7], 0.0, 1.0).unwrap();
        let batch = batch_from(inputs.reshape(&[1, 1, 7]).unwrap(), vec![2]);
        let (_, bundle) = model.backward(&batch, LossKind::SoftmaxCe).unwrap();
        let (gw, gb) = (&bundle.grads[0], &bundle.grads[1]);
        let x = batch.flattened();
        for j in 0..5 {
            if gb.data()[j].abs() > 1e-12 {
                for i in 0..7 {
                    let ratio = gw.at2(i, j) / gb.data()[j];
                    assert!((ratio - x.at2(0, i)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn mean_softmax_output_close_to_uniform_over_inits() {
        // Over many random inits the average softmax probability of any
        // fixed class stays within 3 standard errors of 1/C.
        let mut rng = SeededRng::new(80, 0);
        let c = 7;
        let x = rng.uniform(&[1, 12], 0.0, 1.0).unwrap();
        let mut values = Vec::with_capacity(1000);
        for _ in 0..1000 {
            let model = DenseModel::init_uniform(12, c, &mut rng);
            let logits = model.forward(&x).unwrap();
            values.push(softmax(logits.row(0))[1]);
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        let expected = 1.0 / c as f64;
        assert!(
            (mean - expected).abs() < 3.0 * se,
            "mean {mean} vs {expected} (se {se})"
        );
    }

    #[test]
    fn snapshot_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = SeededRng::new(90, 0);
        let dense = Model::Dense(DenseModel::init_uniform(6, 3, &mut rng));
        let lenet = Model::Lenet(LeNetModel::init(10, 10, 3, 2, 4, &mut rng).unwrap());
        for (name, model) in [("dense", dense), ("lenet", lenet)] {
            let path = dir.path().join(name);
            save_model(&path, &model).unwrap();
            let loaded = load_model(&path).unwrap();
            assert_eq!(loaded, model);
        }

        let model = load_model(&dir.path().join("dense")).unwrap();
        let inputs = rng.uniform(&[2, 6], 0.0, 1.0).unwrap();
        let batch = batch_from(inputs.reshape(&[2, 2, 3]).unwrap(), vec![0, 2]);
        let (_, bundle) = model.backward(&batch, LossKind::SoftmaxCe).unwrap();
        let path = dir.path().join("bundle");
        save_bundle(&path, &bundle).unwrap();
        assert_eq!(load_bundle(&path).unwrap(), bundle);
    }
}
