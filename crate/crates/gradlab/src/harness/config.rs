//! TOML experiment manifests: dataset and model selectors, grid axes,
//! optimizer profile, training settings and the master seed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datasets::{load_mnist_idx, make_digits, make_synthetic, Dataset, SamplingStrategy};
use crate::error::{Error, Result};
use crate::models::LossKind;
use crate::numerics::{stream_hash, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentMode {
    /// Optimization attacks over a cell grid; emits recovery rates.
    AttackGrid,
    /// Closed-form ratio inversion error sweeps; emits histograms.
    DirectInversion,
    /// Ratio inversion under additive gradient noise; emits histograms
    /// per noise level.
    NoiseSweep,
    /// Federated training accuracy per loss/strategy variant.
    Training,
}

impl ExperimentMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentMode::AttackGrid => "attack_grid",
            ExperimentMode::DirectInversion => "direct_inversion",
            ExperimentMode::NoiseSweep => "noise_sweep",
            ExperimentMode::Training => "training",
        }
    }
}

/// Which normalized metric decides success.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuccessMetric {
    Avd,
    Mse,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub mode: ExperimentMode,
    #[serde(default = "default_seed")]
    pub master_seed: u64,
    /// Trials per grid cell.
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_thresholds")]
    pub thresholds: Vec<f64>,
    /// Defaults to AVD for sparse digit data and MSE for the synthetic
    /// large-class dataset.
    #[serde(default)]
    pub success_metric: Option<SuccessMetric>,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub training: TrainingConfig,
}

fn default_seed() -> u64 {
    42
}

fn default_trials() -> usize {
    10
}

fn default_thresholds() -> Vec<f64> {
    vec![0.6, 0.8]
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<ExperimentConfig> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)?;
        ExperimentConfig::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.thresholds.iter().any(|&t| !(t > 0.0)) {
            return Err(Error::Config("thresholds must be positive".into()));
        }
        if self.grid.batch_sizes.iter().any(|&b| b == 0) {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if self.optimizer.lr <= 0.0 || self.optimizer.iters == 0 {
            return Err(Error::Config(
                "optimizer needs a positive learning rate and iteration count".into(),
            ));
        }
        Ok(())
    }

    pub fn effective_success_metric(&self) -> SuccessMetric {
        self.success_metric.unwrap_or(match self.dataset.kind {
            DatasetKind::Synthetic => SuccessMetric::Mse,
            _ => SuccessMetric::Avd,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// Generated sparse digit images, always available.
    Digits,
    /// IDX files loaded from the data directory.
    MnistIdx,
    /// Generated large-class-count smooth images.
    Synthetic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    #[serde(default = "default_train_size")]
    pub train_size: usize,
    #[serde(default = "default_test_size")]
    pub test_size: usize,
    /// Synthetic dataset shape parameters.
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default = "default_per_class")]
    pub per_class: usize,
    #[serde(default = "default_side")]
    pub height: usize,
    #[serde(default = "default_side")]
    pub width: usize,
}

fn default_train_size() -> usize {
    2000
}

fn default_test_size() -> usize {
    500
}

fn default_classes() -> usize {
    5749
}

fn default_per_class() -> usize {
    1
}

fn default_side() -> usize {
    32
}

impl DatasetConfig {
    /// Materializes the train/test pair. Generated datasets derive from
    /// the master seed; IDX data comes from `data_dir`.
    pub fn load(&self, master_seed: u64, data_dir: Option<&Path>) -> Result<(Dataset, Dataset)> {
        match self.kind {
            DatasetKind::Digits => {
                let mut train_rng = SeededRng::new(master_seed, stream_hash("dataset|digits|train"));
                let mut test_rng = SeededRng::new(master_seed, stream_hash("dataset|digits|test"));
                Ok((
                    make_digits(self.train_size, &mut train_rng)?,
                    make_digits(self.test_size, &mut test_rng)?,
                ))
            }
            DatasetKind::Synthetic => {
                let mut rng = SeededRng::new(master_seed, stream_hash("dataset|synthetic"));
                let all = make_synthetic(
                    self.classes,
                    self.per_class,
                    self.height,
                    self.width,
                    &mut rng,
                )?;
                // With one sample per class there is nothing to hold out;
                // evaluation-style splits only make sense for k >= 2.
                if self.per_class >= 2 && self.test_size > 0 && self.test_size < all.len() {
                    all.split_tail(self.test_size)
                } else {
                    Ok((all.clone(), all))
                }
            }
            DatasetKind::MnistIdx => {
                let dir = data_dir.ok_or_else(|| {
                    Error::Config(
                        "dataset kind mnist_idx needs a data directory: pass --data-dir, set \
                         GRADLAB_DATA_DIR, or generate files with `gradlab gen-data`"
                            .into(),
                    )
                })?;
                let train = load_mnist_idx(
                    &dir.join("train-images-idx3-ubyte"),
                    &dir.join("train-labels-idx1-ubyte"),
                )?;
                let test = load_mnist_idx(
                    &dir.join("t10k-images-idx3-ubyte"),
                    &dir.join("t10k-labels-idx1-ubyte"),
                )?;
                Ok((train.take(self.train_size)?, test.take(self.test_size)?))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Dense,
    Lenet,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// First-stage channel counts to sweep (convolutional model only).
    #[serde(default = "default_channels")]
    pub channels: Vec<usize>,
    #[serde(default = "default_kernel")]
    pub kernel: usize,
}

fn default_channels() -> Vec<usize> {
    vec![1]
}

fn default_kernel() -> usize {
    5
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Dense,
            channels: default_channels(),
            kernel: default_kernel(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_batch_sizes")]
    pub batch_sizes: Vec<usize>,
    #[serde(default = "default_losses")]
    pub losses: Vec<LossKind>,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<SamplingStrategy>,
    #[serde(default = "default_attacks")]
    pub attacks: Vec<crate::attacks::AttackKind>,
    /// Gradient noise standard deviations; 0 means no defense.
    #[serde(default = "default_noise")]
    pub noise_stds: Vec<f64>,
}

fn default_batch_sizes() -> Vec<usize> {
    vec![1, 2, 4, 6]
}

fn default_losses() -> Vec<LossKind> {
    vec![LossKind::SoftmaxCe]
}

fn default_strategies() -> Vec<SamplingStrategy> {
    vec![SamplingStrategy::RandomLabels]
}

fn default_attacks() -> Vec<crate::attacks::AttackKind> {
    crate::attacks::AttackKind::all().to_vec()
}

fn default_noise() -> Vec<f64> {
    vec![0.0]
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            batch_sizes: default_batch_sizes(),
            losses: default_losses(),
            strategies: default_strategies(),
            attacks: default_attacks(),
            noise_stds: default_noise(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_iters")]
    pub iters: usize,
    #[serde(default = "default_tv_weight")]
    pub tv_weight: f64,
    #[serde(default = "default_orth_weight")]
    pub orth_weight: f64,
}

fn default_lr() -> f64 {
    0.05
}

fn default_iters() -> usize {
    550
}

fn default_tv_weight() -> f64 {
    1e-2
}

fn default_orth_weight() -> f64 {
    1e-3
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr: default_lr(),
            iters: default_iters(),
            tv_weight: default_tv_weight(),
            orth_weight: default_orth_weight(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    #[serde(default = "default_clients")]
    pub clients: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_train_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_train_batch")]
    pub batch_size: usize,
    #[serde(default = "default_eval_subset")]
    pub eval_subset: usize,
    /// Loss and strategy used by the standalone `train` subcommand.
    #[serde(default = "default_train_loss")]
    pub loss: LossKind,
    #[serde(default = "default_train_strategy")]
    pub strategy: SamplingStrategy,
    /// Global rounds at which the eavesdropper stores a record.
    #[serde(default = "default_eavesdrop_rounds")]
    pub eavesdrop_rounds: Vec<usize>,
}

fn default_clients() -> usize {
    4
}

fn default_epochs() -> usize {
    5
}

fn default_train_lr() -> f64 {
    0.1
}

fn default_train_batch() -> usize {
    6
}

fn default_eval_subset() -> usize {
    2000
}

fn default_train_loss() -> LossKind {
    LossKind::SoftmaxCe
}

fn default_train_strategy() -> SamplingStrategy {
    SamplingStrategy::RandomLabels
}

fn default_eavesdrop_rounds() -> Vec<usize> {
    vec![0]
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            clients: default_clients(),
            epochs: default_epochs(),
            learning_rate: default_train_lr(),
            batch_size: default_train_batch(),
            eval_subset: default_eval_subset(),
            loss: default_train_loss(),
            strategy: default_train_strategy(),
            eavesdrop_rounds: default_eavesdrop_rounds(),
        }
    }
}

/// Resolves the data directory: an explicit flag wins, then the
/// GRADLAB_DATA_DIR environment variable.
pub fn resolve_data_dir(flag: Option<&Path>) -> Option<PathBuf> {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os("GRADLAB_DATA_DIR").map(PathBuf::from))
}
