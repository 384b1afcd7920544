//! Federated-learning round simulation: clients compute batch gradients,
//! an aggregator averages and applies them, an eavesdropper hook captures
//! a designated client's bundle together with the pre-update model
//! snapshot, and full training runs measure accuracy under each defense
//! strategy.

use crate::datasets::{sample_batch, Batch, Dataset, SamplingStrategy};
use crate::error::{Error, Result};
use crate::models::{GradientBundle, LossKind, Model};
use crate::numerics::{SeededRng, Tensor};

/// Configuration of one federated training run.
#[derive(Debug, Clone)]
pub struct FedConfig {
    pub num_clients: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub strategy: SamplingStrategy,
    pub loss: LossKind,
    pub epochs: usize,
    /// Cap on evaluation set sizes, to keep per-epoch accuracy cheap.
    pub eval_subset_size: usize,
    pub seed: u64,
    /// Rounds per epoch; defaults to `len / (clients * batch)` when zero.
    pub rounds_per_epoch: usize,
    /// Which client the eavesdropper watches.
    pub eavesdrop_client: usize,
    /// Global round indices at which an eavesdrop record is captured.
    pub eavesdrop_rounds: Vec<usize>,
}

impl FedConfig {
    /// Desk-scale defaults: 4 clients, batch 6, learning rate 0.1.
    pub fn desk_scale(strategy: SamplingStrategy, loss: LossKind, seed: u64) -> FedConfig {
        FedConfig {
            num_clients: 4,
            learning_rate: 0.1,
            batch_size: 6,
            strategy,
            loss,
            epochs: 5,
            eval_subset_size: 2000,
            seed,
            rounds_per_epoch: 0,
            eavesdrop_client: 0,
            eavesdrop_rounds: vec![0],
        }
    }
}

/// Accuracy and loss trajectory of a training run.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub final_train_accuracy: f64,
    pub final_test_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub mean_loss: f64,
}

/// A captured gradient exchange: the pre-update model and the bundle one
/// client shared that round, plus the batch behind it so attack results
/// can be scored offline.
#[derive(Debug, Clone)]
pub struct EavesdropRecord {
    pub round: usize,
    pub client: usize,
    pub model: Model,
    pub bundle: GradientBundle,
    pub batch: Batch,
}

const RECORD_MAGIC: &[u8; 4] = b"GLER";
const RECORD_VERSION: u32 = 1;

/// Writes an eavesdrop record (round metadata, loss kind, pre-update
/// model snapshot, captured bundle, and the ground-truth batch for
/// offline scoring) to one self-contained binary file.
pub fn save_record(path: &std::path::Path, record: &EavesdropRecord, loss: LossKind) -> Result<()> {
    use crate::models::snapshot_bytes::{bundle_bytes, model_bytes, push_tensor, push_u32};
    let mut out = Vec::new();
    out.extend_from_slice(RECORD_MAGIC);
    push_u32(&mut out, RECORD_VERSION);
    push_u32(&mut out, record.round as u32);
    push_u32(&mut out, record.client as u32);
    out.push(match loss {
        LossKind::SoftmaxCe => 0,
        LossKind::Mse => 1,
        LossKind::SoftmaxMse => 2,
    });
    out.push(match record.batch.strategy {
        SamplingStrategy::RandomLabels => 0,
        SamplingStrategy::EqualLabels => 1,
        SamplingStrategy::UniqueLabels => 2,
    });
    let model = model_bytes(&record.model);
    push_u32(&mut out, model.len() as u32);
    out.extend_from_slice(&model);
    let bundle = bundle_bytes(&record.bundle);
    push_u32(&mut out, bundle.len() as u32);
    out.extend_from_slice(&bundle);
    push_tensor(&mut out, &record.batch.inputs);
    push_u32(&mut out, record.batch.labels.len() as u32);
    for &l in &record.batch.labels {
        push_u32(&mut out, l as u32);
    }
    for &i in &record.batch.indices {
        push_u32(&mut out, i as u32);
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a record written by [`save_record`]; returns the record and the
/// loss kind the client trained with.
pub fn load_record(path: &std::path::Path) -> Result<(EavesdropRecord, LossKind)> {
    use crate::models::snapshot_bytes::{read_bundle, read_model, Reader};
    let bytes = std::fs::read(path)?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path: path.display().to_string(),
    };
    if r.take(4)? != RECORD_MAGIC {
        return Err(r.fail("bad magic"));
    }
    if r.u32()? != RECORD_VERSION {
        return Err(r.fail("unsupported version"));
    }
    let round = r.u32()? as usize;
    let client = r.u32()? as usize;
    let loss = match r.u8()? {
        0 => LossKind::SoftmaxCe,
        1 => LossKind::Mse,
        2 => LossKind::SoftmaxMse,
        k => return Err(r.fail(&format!("unknown loss kind {k}"))),
    };
    let strategy = match r.u8()? {
        0 => SamplingStrategy::RandomLabels,
        1 => SamplingStrategy::EqualLabels,
        2 => SamplingStrategy::UniqueLabels,
        k => return Err(r.fail(&format!("unknown strategy {k}"))),
    };
    let model_len = r.u32()? as usize;
    let model_bytes = r.take(model_len)?.to_vec();
    let mut mr = Reader {
        bytes: &model_bytes,
        pos: 0,
        path: r.path.clone(),
    };
    let model = read_model(&mut mr)?;
    let bundle_len = r.u32()? as usize;
    let bundle_bytes = r.take(bundle_len)?.to_vec();
    let mut br = Reader {
        bytes: &bundle_bytes,
        pos: 0,
        path: r.path.clone(),
    };
    let bundle = read_bundle(&mut br)?;
    let inputs = r.tensor()?;
    let count = r.u32()? as usize;
    let labels: Vec<usize> = (0..count)
        .map(|_| r.u32().map(|v| v as usize))
        .collect::<Result<_>>()?;
    let indices: Vec<usize> = (0..count)
        .map(|_| r.u32().map(|v| v as usize))
        .collect::<Result<_>>()?;
    if !r.done() {
        return Err(r.fail("trailing bytes"));
    }
    Ok((
        EavesdropRecord {
            round,
            client,
            model,
            bundle,
            batch: Batch {
                inputs,
                labels,
                indices,
                strategy,
            },
        },
        loss,
    ))
}

/// One client step: draw a batch, compute the batch-mean gradient at the
/// current model.
pub fn client_step(
    model: &Model,
    dataset: &Dataset,
    strategy: SamplingStrategy,
    batch_size: usize,
    loss: LossKind,
    rng: &mut SeededRng,
) -> Result<(Batch, GradientBundle)> {
    let batch = sample_batch(dataset, strategy, batch_size, rng)?;
    let (_, bundle) = model.backward(&batch, loss)?;
    Ok((batch, bundle))
}

/// Averages the client bundles elementwise and applies one SGD step.
pub fn aggregate_and_update(
    model: &mut Model,
    bundles: &[GradientBundle],
    learning_rate: f64,
) -> Result<()> {
    if bundles.is_empty() {
        return Err(Error::InvalidArgument("no bundles to aggregate".into()));
    }
    let mut mean = bundles[0].clone();
    for other in &bundles[1..] {
        if !mean.same_shapes(other) {
            return Err(Error::InvalidArgument(
                "client bundles have mismatched shapes".into(),
            ));
        }
        for (acc, t) in mean.grads.iter_mut().zip(other.grads.iter()) {
            acc.add_scaled(t, 1.0)?;
        }
    }
    let scale = 1.0 / bundles.len() as f64;
    for t in mean.grads.iter_mut() {
        *t = t.scale(scale);
    }
    model.sgd_step(&mean, learning_rate)
}

/// Fraction of samples whose argmax logit matches the label; ties break
/// toward the lowest class index.
pub fn evaluate(model: &Model, dataset: &Dataset, limit: usize) -> Result<f64> {
    let count = if limit == 0 {
        dataset.len()
    } else {
        limit.min(dataset.len())
    };
    if count == 0 {
        return Err(Error::InvalidArgument("empty evaluation split".into()));
    }
    let mut correct = 0usize;
    // Evaluate in chunks so huge datasets never materialize a giant
    // logits tensor.
    let chunk = 512;
    let mut start = 0;
    while start < count {
        let end = (start + chunk).min(count);
        let inner = dataset.input_len();
        let images = Tensor::from_vec(
            &[end - start, dataset.height(), dataset.width()],
            dataset.images.data()[start * inner..end * inner].to_vec(),
        )?;
        let logits = model.forward(&images)?;
        for m in 0..(end - start) {
            let row = logits.row(m);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            if best == dataset.labels[start + m] {
                correct += 1;
            }
        }
        start = end;
    }
    Ok(correct as f64 / count as f64)
}

/// Runs federated training and returns the accuracy report plus the
/// eavesdrop stream. Deterministic per seed: every client round draws
/// from its own derived stream.
pub fn train(
    model: &mut Model,
    train_set: &Dataset,
    test_set: &Dataset,
    config: &FedConfig,
) -> Result<(TrainReport, Vec<EavesdropRecord>)> {
    if config.num_clients == 0 || config.batch_size == 0 || config.learning_rate <= 0.0 {
        return Err(Error::Config(
            "need at least one client, a positive batch size and a positive learning rate".into(),
        ));
    }
    let rounds_per_epoch = if config.rounds_per_epoch > 0 {
        config.rounds_per_epoch
    } else {
        (train_set.len() / (config.num_clients * config.batch_size)).max(1)
    };

    let mut epochs = Vec::with_capacity(config.epochs);
    let mut eavesdropped = Vec::new();
    let mut global_round = 0usize;
    for epoch in 0..config.epochs {
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for _ in 0..rounds_per_epoch {
            let mut bundles = Vec::with_capacity(config.num_clients);
            for client in 0..config.num_clients {
                let stream = crate::numerics::stream_hash(&format!(
                    "fed|round={global_round}|client={client}"
                ));
                let mut rng = SeededRng::new(config.seed, stream);
                let batch =
                    sample_batch(train_set, config.strategy, config.batch_size, &mut rng)?;
                let (loss, bundle) = model.backward(&batch, config.loss)?;
                loss_sum += loss;
                loss_count += 1;
                if client == config.eavesdrop_client
                    && config.eavesdrop_rounds.contains(&global_round)
                {
                    eavesdropped.push(EavesdropRecord {
                        round: global_round,
                        client,
                        model: model.clone(),
                        bundle: bundle.clone(),
                        batch: batch.clone(),
                    });
                }
                bundles.push(bundle);
            }
            aggregate_and_update(model, &bundles, config.learning_rate)?;
            global_round += 1;
        }
        let train_accuracy = evaluate(model, train_set, config.eval_subset_size)?;
        let test_accuracy = evaluate(model, test_set, config.eval_subset_size)?;
        epochs.push(EpochStats {
            epoch,
            train_accuracy,
            test_accuracy,
            mean_loss: loss_sum / loss_count.max(1) as f64,
        });
    }
    let final_train = epochs.last().map(|e| e.train_accuracy).unwrap_or(0.0);
    let final_test = epochs.last().map(|e| e.test_accuracy).unwrap_or(0.0);
    Ok((
        TrainReport {
            epochs,
            final_train_accuracy: final_train,
            final_test_accuracy: final_test,
        },
        eavesdropped,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::make_digits;
    use crate::models::DenseModel;

    fn digits(n: usize, seed: u64) -> Dataset {
        let mut rng = SeededRng::new(seed, 0);
        make_digits(n, &mut rng).unwrap()
    }

    #[test]
    fn single_sample_client_step_equals_per_sample_gradient() {
        let ds = digits(50, 1);
        let mut rng = SeededRng::new(2, 0);
        let model = Model::Dense(DenseModel::init_uniform(784, 10, &mut rng));
        let (batch, bundle) =
            client_step(&model, &ds, SamplingStrategy::RandomLabels, 1, LossKind::SoftmaxCe, &mut rng)
                .unwrap();
        let (_, per_sample) = model.backward_per_sample(&batch, LossKind::SoftmaxCe).unwrap();
        let collapsed = per_sample.mean();
        for (a, b) in bundle.grads.iter().zip(collapsed.grads.iter()) {
            assert!(crate::numerics::l2_norm(&a.sub(b).unwrap()) < 1e-15);
        }
    }

    #[test]
    fn identical_seeds_produce_identical_bundles() {
        let ds = digits(50, 3);
        let mut rng = SeededRng::new(4, 0);
        let model = Model::Dense(DenseModel::init_uniform(784, 10, &mut rng));
        let mut a = SeededRng::new(9, 7);
        let mut b = SeededRng::new(9, 7);
        let (_, ba) =
            client_step(&model, &ds, SamplingStrategy::EqualLabels, 3, LossKind::Mse, &mut a).unwrap();
        let (_, bb) =
            client_step(&model, &ds, SamplingStrategy::EqualLabels, 3, LossKind::Mse, &mut b).unwrap();
        assert_eq!(ba, bb);
    }

    #[test]
    fn aggregation_is_elementwise_mean() {
        let mut rng = SeededRng::new(5, 0);
        let base = Model::Dense(DenseModel::init_uniform(6, 3, &mut rng));
        let ds = {
            let mut drng = SeededRng::new(6, 0);
            crate::datasets::make_synthetic(3, 4, 2, 3, &mut drng).unwrap()
        };
        let (_, b1) = client_step(&base, &ds, SamplingStrategy::RandomLabels, 2, LossKind::SoftmaxCe, &mut rng).unwrap();
        let (_, b2) = client_step(&base, &ds, SamplingStrategy::RandomLabels, 2, LossKind::SoftmaxCe, &mut rng).unwrap();

        let mut averaged = base.clone();
        aggregate_and_update(&mut averaged, &[b1.clone(), b2.clone()], 1.0).unwrap();
        let mut manual = base.clone();
        let mean = GradientBundle {
            grads: b1
                .grads
                .iter()
                .zip(b2.grads.iter())
                .map(|(a, b)| a.add(b).unwrap().scale(0.5))
                .collect(),
            scope: b1.scope,
        };
        manual.sgd_step(&mean, 1.0).unwrap();
        assert_eq!(averaged, manual);

        // Zero rate leaves the model untouched; K identical bundles act
        // like a single client.
        let mut unchanged = base.clone();
        aggregate_and_update(&mut unchanged, &[b1.clone()], 0.0).unwrap();
        assert_eq!(unchanged, base);
        let mut k_copies = base.clone();
        aggregate_and_update(&mut k_copies, &[b1.clone(), b1.clone(), b1.clone()], 0.5).unwrap();
        let mut single = base.clone();
        aggregate_and_update(&mut single, &[b1], 0.5).unwrap();
        for (a, b) in k_copies.params().iter().zip(single.params().iter()) {
            assert!(crate::numerics::l2_norm(&a.sub(b).unwrap()) < 1e-14);
        }
    }

    #[test]
    fn client_mean_equals_concatenated_batch_mean() {
        // K clients with batches of size B aggregate to the same gradient
        // as one client holding the concatenation.
        let mut rng = SeededRng::new(7, 0);
        let model = Model::Dense(DenseModel::init_uniform(784, 10, &mut rng));
        let ds = digits(60, 8);
        let k = 3;
        let b = 2;
        let mut batches = Vec::new();
        let mut bundles = Vec::new();
        for client in 0..k {
            let mut crng = SeededRng::new(10, client as u64);
            let (batch, bundle) =
                client_step(&model, &ds, SamplingStrategy::RandomLabels, b, LossKind::SoftmaxCe, &mut crng)
                    .unwrap();
            batches.push(batch);
            bundles.push(bundle);
        }
        let mut mean = bundles[0].clone();
        for other in &bundles[1..] {
            for (acc, t) in mean.grads.iter_mut().zip(other.grads.iter()) {
                acc.add_scaled(t, 1.0).unwrap();
            }
        }
        for t in mean.grads.iter_mut() {
            *t = t.scale(1.0 / k as f64);
        }

        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        let mut indices = Vec::new();
        for batch in &batches {
            inputs.extend_from_slice(batch.inputs.data());
            labels.extend_from_slice(&batch.labels);
            indices.extend_from_slice(&batch.indices);
        }
        let concat = Batch {
            inputs: Tensor::from_vec(&[k * b, 28, 28], inputs).unwrap(),
            labels,
            indices,
            strategy: SamplingStrategy::RandomLabels,
        };
        let (_, big) = model.backward(&concat, LossKind::SoftmaxCe).unwrap();
        for (a, b) in mean.grads.iter().zip(big.grads.iter()) {
            let diff = crate::numerics::l2_norm(&a.sub(b).unwrap());
            assert!(diff < 1e-12, "diff {diff}");
        }
    }

    #[test]
    fn zero_model_accuracy_is_class_zero_fraction() {
        let ds = digits(500, 11);
        let model = Model::Dense(DenseModel::zeros(784, 10));
        let acc = evaluate(&model, &ds, 0).unwrap();
        let zero_fraction =
            ds.labels.iter().filter(|&&l| l == 0).count() as f64 / ds.len() as f64;
        assert_eq!(acc, zero_fraction);
    }

    #[test]
    fn record_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = digits(40, 14);
        let mut rng = SeededRng::new(15, 0);
        let model = Model::Dense(DenseModel::init_uniform(784, 10, &mut rng));
        let (batch, bundle) =
            client_step(&model, &ds, SamplingStrategy::UniqueLabels, 4, LossKind::SoftmaxMse, &mut rng)
                .unwrap();
        let record = EavesdropRecord {
            round: 7,
            client: 2,
            model,
            bundle,
            batch,
        };
        let path = dir.path().join("round0007_client2.rec");
        save_record(&path, &record, LossKind::SoftmaxMse).unwrap();
        let (loaded, loss) = load_record(&path).unwrap();
        assert_eq!(loss, LossKind::SoftmaxMse);
        assert_eq!(loaded.round, 7);
        assert_eq!(loaded.client, 2);
        assert_eq!(loaded.model, record.model);
        assert_eq!(loaded.bundle, record.bundle);
        assert_eq!(loaded.batch.inputs, record.batch.inputs);
        assert_eq!(loaded.batch.labels, record.batch.labels);
        assert_eq!(loaded.batch.indices, record.batch.indices);
    }

    #[test]
    fn training_is_reproducible_and_captures_eavesdrops() {
        let train_ds = digits(300, 12);
        let test_ds = digits(100, 13);
        let cfg = FedConfig {
            epochs: 2,
            eval_subset_size: 100,
            eavesdrop_rounds: vec![0, 3],
            ..FedConfig::desk_scale(SamplingStrategy::RandomLabels, LossKind::SoftmaxCe, 21)
        };
        let mut rng = SeededRng::new(21, 100);
        let init = Model::Dense(DenseModel::init_uniform(784, 10, &mut rng));

        let mut m1 = init.clone();
        let (r1, e1) = train(&mut m1, &train_ds, &test_ds, &cfg).unwrap();
        let mut m2 = init.clone();
        let (r2, e2) = train(&mut m2, &train_ds, &test_ds, &cfg).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(r1.final_test_accuracy, r2.final_test_accuracy);
        assert_eq!(e1.len(), 2);
        assert_eq!(e1[0].round, 0);
        assert_eq!(e1[1].round, 3);
        assert_eq!(e1[0].bundle, e2[0].bundle);
        // The captured snapshot is the pre-update model of that round.
        assert_eq!(e1[0].model, init);
        // Accuracy should move above the 10-class chance level quickly.
        assert!(r1.final_test_accuracy > 0.3, "{}", r1.final_test_accuracy);
    }
}
