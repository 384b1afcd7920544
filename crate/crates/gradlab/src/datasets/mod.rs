//! Dataset ingestion and mini-batch sampling under the three label
//! strategies that drive every experiment in the crate.

mod idx;
mod synthetic;

pub use idx::{load_mnist_idx, write_idx_images, write_idx_labels};
pub use synthetic::{make_digits, make_synthetic};

use crate::error::{Error, Result};
use crate::numerics::{SeededRng, Tensor};

/// Immutable image-classification dataset with pixels in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    /// `[N, H, W]` image stack.
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(
        name: &str,
        images: Tensor,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Dataset> {
        if images.ndim() != 3 {
            return Err(Error::InvalidArgument(format!(
                "images must be [N, H, W], got shape {:?}",
                images.shape()
            )));
        }
        let n = images.shape()[0];
        if n == 0 || labels.len() != n {
            return Err(Error::InvalidArgument(format!(
                "{n} images but {} labels",
                labels.len()
            )));
        }
        if num_classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        if images
            .data()
            .iter()
            .any(|&v| !(0.0..=1.0).contains(&v))
        {
            return Err(Error::InvalidArgument(
                "pixel values must lie in [0, 1]".into(),
            ));
        }
        Ok(Dataset {
            name: name.to_string(),
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn height(&self) -> usize {
        self.images.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.images.shape()[2]
    }

    /// Flattened input size per sample.
    pub fn input_len(&self) -> usize {
        self.height() * self.width()
    }

    pub fn image(&self, index: usize) -> Tensor {
        self.images.subtensor(index)
    }

    /// New dataset containing the first `count` samples.
    pub fn take(&self, count: usize) -> Result<Dataset> {
        let count = count.min(self.len());
        let inner = self.input_len();
        let images = Tensor::from_vec(
            &[count, self.height(), self.width()],
            self.images.data()[..count * inner].to_vec(),
        )?;
        Dataset::new(&self.name, images, self.labels[..count].to_vec(), self.num_classes)
    }

    /// Splits off the last `count` samples as a held-out set.
    pub fn split_tail(&self, count: usize) -> Result<(Dataset, Dataset)> {
        if count == 0 || count >= self.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot split {count} samples from a dataset of {}",
                self.len()
            )));
        }
        let head = self.len() - count;
        let inner = self.input_len();
        let train = Dataset::new(
            &self.name,
            Tensor::from_vec(
                &[head, self.height(), self.width()],
                self.images.data()[..head * inner].to_vec(),
            )?,
            self.labels[..head].to_vec(),
            self.num_classes,
        )?;
        let test = Dataset::new(
            &self.name,
            Tensor::from_vec(
                &[count, self.height(), self.width()],
                self.images.data()[head * inner..].to_vec(),
            )?,
            self.labels[head..].to_vec(),
            self.num_classes,
        )?;
        Ok((train, test))
    }

    fn class_indices(&self, class: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect()
    }
}

/// How labels are drawn when forming a mini-batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingStrategy {
    /// Unconstrained uniform draw over the dataset.
    RandomLabels,
    /// Every sample in the batch carries the same label.
    EqualLabels,
    /// All labels in the batch are distinct (needs batch size <= classes).
    UniqueLabels,
}

impl SamplingStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            SamplingStrategy::RandomLabels => "random",
            SamplingStrategy::EqualLabels => "equal",
            SamplingStrategy::UniqueLabels => "unique",
        }
    }
}

impl std::fmt::Display for SamplingStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A drawn mini-batch, keeping the source row indices so callers can
/// recover ground truth.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `[B, H, W]` inputs copied from the dataset.
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub indices: Vec<usize>,
    pub strategy: SamplingStrategy,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn height(&self) -> usize {
        self.inputs.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.inputs.shape()[2]
    }

    /// `[B, H*W]` view for dense models; row-major over (H, W).
    pub fn flattened(&self) -> Tensor {
        let b = self.size();
        let n = self.height() * self.width();
        self.inputs.reshape(&[b, n]).expect("flatten preserves length")
    }

    pub fn input(&self, index: usize) -> Tensor {
        self.inputs.subtensor(index)
    }
}

/// Draws a batch of size `batch_size` under `strategy`.
///
/// Equal-label draws pick one class and sample within it, with
/// replacement when the class holds fewer than `batch_size` samples.
/// Unique-label draws pick distinct classes, then one sample from each.
pub fn sample_batch(
    dataset: &Dataset,
    strategy: SamplingStrategy,
    batch_size: usize,
    rng: &mut SeededRng,
) -> Result<Batch> {
    if batch_size == 0 {
        return Err(Error::InfeasibleSampling("batch size must be at least 1".into()));
    }
    let indices: Vec<usize> = match strategy {
        SamplingStrategy::RandomLabels => (0..batch_size)
            .map(|_| rng.index(dataset.len()))
            .collect(),
        SamplingStrategy::EqualLabels => {
            let classes: Vec<usize> = (0..dataset.num_classes)
                .filter(|&c| dataset.labels.iter().any(|&l| l == c))
                .collect();
            if classes.is_empty() {
                return Err(Error::InfeasibleSampling("no class has samples".into()));
            }
            let class = classes[rng.index(classes.len())];
            let members = dataset.class_indices(class);
            if members.len() >= batch_size {
                rng.distinct_indices(members.len(), batch_size)
                    .into_iter()
                    .map(|i| members[i])
                    .collect()
            } else {
                (0..batch_size)
                    .map(|_| members[rng.index(members.len())])
                    .collect()
            }
        }
        SamplingStrategy::UniqueLabels => {
            if batch_size > dataset.num_classes {
                return Err(Error::InfeasibleSampling(format!(
                    "unique labels impossible: batch {batch_size} exceeds {} classes",
                    dataset.num_classes
                )));
            }
            let populated: Vec<usize> = (0..dataset.num_classes)
                .filter(|&c| dataset.labels.iter().any(|&l| l == c))
                .collect();
            if batch_size > populated.len() {
                return Err(Error::InfeasibleSampling(format!(
                    "unique labels impossible: batch {batch_size} exceeds {} populated classes",
                    populated.len()
                )));
            }
            let picks = rng.distinct_indices(populated.len(), batch_size);
            picks
                .into_iter()
                .map(|p| {
                    let members = dataset.class_indices(populated[p]);
                    members[rng.index(members.len())]
                })
                .collect()
        }
    };

    let inner = dataset.input_len();
    let mut data = Vec::with_capacity(batch_size * inner);
    let mut labels = Vec::with_capacity(batch_size);
    for &i in &indices {
        data.extend_from_slice(&dataset.images.data()[i * inner..(i + 1) * inner]);
        labels.push(dataset.labels[i]);
    }
    Ok(Batch {
        inputs: Tensor::from_vec(&[batch_size, dataset.height(), dataset.width()], data)?,
        labels,
        indices,
        strategy,
    })
}
