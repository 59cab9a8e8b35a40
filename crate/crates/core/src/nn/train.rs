use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{self, Dropout};
use super::optim::{sgd_step, AdamState, OptimizerKind};
use super::params::{Dims, ModelParameters};
use crate::error::{Error, Result};
use crate::ingest::Sample;
use crate::seed;

/// Hyperparameters shared by local and centralized training; the federated
/// clients reuse the batch size, learning rate and dropout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Minimum validation-accuracy gain that counts as improvement.
    pub min_delta: f64,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub dropout: f64,
    pub seq_len: usize,
    pub hidden: usize,
    /// Width of the ReLU layer; defaults to `hidden`.
    pub dense: Option<usize>,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            max_epochs: 500,
            patience: 50,
            min_delta: 0.01,
            learning_rate: 0.001,
            optimizer: OptimizerKind::Adam,
            dropout: 0.5,
            seq_len: 24,
            hidden: 256,
            dense: None,
            validation_fraction: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn dims(&self) -> Dims {
        let dims = Dims::activity(self.hidden);
        match self.dense {
            Some(d) => dims.with_dense(d),
            None => dims,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
            ("seq_len", self.seq_len),
            ("hidden", self.hidden),
            ("dense", self.dense.unwrap_or(1)),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be positive")));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig("dropout must be in [0, 1)".into()));
        }
        if self.min_delta.is_nan() || self.min_delta < 0.0 {
            return Err(Error::InvalidConfig("min_delta must be nonnegative".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::InvalidConfig("validation_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }
}

pub(crate) enum Optimizer {
    Adam(AdamState),
    Sgd,
}

impl Optimizer {
    pub(crate) fn new(kind: OptimizerKind, params: &ModelParameters) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam(AdamState::new(params)),
            OptimizerKind::Sgd => Optimizer::Sgd,
        }
    }

    fn step(&mut self, params: &mut ModelParameters, grads: &ModelParameters, lr: f64) {
        match self {
            Optimizer::Adam(state) => state.step(params, grads, lr),
            Optimizer::Sgd => sgd_step(params, grads, lr),
        }
    }
}

/// One shuffled pass over `samples`. Returns the mean batch loss and the
/// number of samples trained on.
pub(crate) fn run_epoch(
    params: &mut ModelParameters,
    optimizer: &mut Optimizer,
    samples: &[Sample],
    config: &TrainConfig,
    epoch_seed: u64,
    drop_remainder: bool,
) -> Result<(f64, usize)> {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
    let dropout_root = seed::derive(epoch_seed, "dropout");
    let mut total_loss = 0.0;
    let mut batches = 0;
    let mut used = 0;
    for (b, chunk) in order.chunks(config.batch_size).enumerate() {
        if drop_remainder && chunk.len() < config.batch_size {
            break;
        }
        let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
        let dropout = (config.dropout > 0.0).then(|| Dropout {
            rate: config.dropout,
            seed: seed::derive_n(dropout_root, b as u64),
        });
        let (loss, grads) = model::loss_and_grads_with(params, &batch, dropout)?;
        optimizer.step(params, &grads, config.learning_rate);
        total_loss += loss;
        batches += 1;
        used += batch.len();
    }
    debug_assert!(params.is_finite(), "non-finite parameters after update");
    Ok((if batches > 0 { total_loss / batches as f64 } else { 0.0 }, used))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Validation accuracy (training accuracy when no validation data).
    pub monitor_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the best monitored epoch.
    pub params: ModelParameters,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// Mini-batch training with early stopping on validation accuracy.
///
/// Training stops once `patience` consecutive epochs fail to raise the best
/// accuracy by at least `min_delta`, or after `max_epochs`. With an empty
/// validation set the training accuracy is monitored instead.
pub fn train(
    params: ModelParameters,
    train_samples: &[Sample],
    validation: &[Sample],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if train_samples.is_empty() {
        return Err(Error::EmptyDataset("no training samples".into()));
    }
    config.validate()?;
    let monitor = if validation.is_empty() { train_samples } else { validation };
    let mut params = params;
    let mut optimizer = Optimizer::new(config.optimizer, &params);
    let shuffle_root = seed::derive(config.seed, "shuffle");

    let mut best_acc = f64::NEG_INFINITY;
    let mut best_params = params.clone();
    let mut best_epoch = 0;
    let mut wait = 0;
    let mut history = Vec::new();

    for epoch in 1..=config.max_epochs {
        let epoch_seed = seed::derive_n(shuffle_root, epoch as u64);
        let (loss, _) = run_epoch(&mut params, &mut optimizer, train_samples, config, epoch_seed, false)?;
        let acc = evaluate(&params, monitor)?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss,
            monitor_accuracy: acc,
        });
        // The tolerance absorbs rounding in differences of sample ratios.
        if acc - best_acc >= config.min_delta - 1e-12 {
            best_acc = acc;
            best_params.clone_from(&params);
            best_epoch = epoch;
            wait = 0;
        } else {
            wait += 1;
            if wait >= config.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        params: best_params,
        epochs_run: history.len(),
        best_epoch,
        history,
    })
}

/// Fraction of samples whose argmax prediction equals the target.
pub fn evaluate(params: &ModelParameters, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::UndefinedMetric("accuracy of an empty sample set".into()));
    }
    let preds = model::predict(params, samples)?;
    let correct = preds
        .iter()
        .zip(samples)
        .filter(|(p, s)| s.target.index() == Some(**p))
        .count();
    Ok(correct as f64 / samples.len() as f64)
}
