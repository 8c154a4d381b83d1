//! Mini-batch Adam training with frozen-parameter enforcement, per-epoch
//! validation and best-epoch checkpointing.

mod adam;
mod checkpoint;
mod loss;
mod prefetch;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{DataError, Pipeline, Sample};
use crate::freeze::FineTuneStrategy;
use crate::metrics::{self, Averaging, MetricError, MetricReport};
use crate::net::{NetError, SegmentationNetwork};

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, CheckpointMeta};
pub use loss::{loss, loss_and_grad, LossKind, DICE_SMOOTH};
pub use prefetch::prefetch;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("logits shape {logits:?} does not match mask shape {mask:?}")]
    Shape { logits: [usize; 4], mask: [usize; 4] },
    #[error("non-finite loss {value} at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize, value: f64 },
    #[error("no training samples")]
    EmptyData,
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_initial: f64,
    pub lr_decay_per_epoch: f64,
    pub optimizer: OptimizerKind,
    pub adam: AdamConfig,
    pub loss: LossKind,
    pub seed: u64,
    /// Batches prepared ahead of the optimizer.
    pub prefetch: usize,
    /// Sigmoid threshold for validation Dice.
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 10,
            lr_initial: 1e-4,
            lr_decay_per_epoch: 0.95,
            optimizer: OptimizerKind::Adam,
            adam: AdamConfig::default(),
            loss: LossKind::DiceBce,
            seed: 0,
            prefetch: 2,
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let err = |m: String| Err(TrainError::Config(m));
        if self.epochs == 0 {
            return err("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return err("batch_size must be at least 1".into());
        }
        if !(self.lr_initial > 0.0 && self.lr_initial.is_finite()) {
            return err(format!("lr_initial = {}", self.lr_initial));
        }
        if !(self.lr_decay_per_epoch > 0.0 && self.lr_decay_per_epoch <= 1.0) {
            return err(format!("lr_decay_per_epoch = {} not in (0, 1]", self.lr_decay_per_epoch));
        }
        if self.prefetch == 0 {
            return err("prefetch capacity must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.threshold) {
            return err(format!("threshold = {}", self.threshold));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// `lr_initial * decay^epoch`.
pub fn lr_schedule(cfg: &TrainConfig, epoch: usize) -> f64 {
    cfg.lr_initial * cfg.lr_decay_per_epoch.powi(epoch as i32)
}

/// Optimizer steps per epoch when the last partial batch is kept.
pub fn steps_per_epoch(samples: usize, batch_size: usize) -> usize {
    samples.div_ceil(batch_size)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_train_loss: f64,
    pub lr: f64,
    pub val_dice: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub logs: Vec<EpochLog>,
    /// State of the epoch with the highest validation Dice (earliest on ties).
    pub best: Checkpoint,
    pub steps: u64,
}

/// Trains the trainable parameters of `net` (strategy already applied).
///
/// `on_epoch` sees each log as soon as the epoch is validated. Frozen
/// parameters are never written.
pub fn train(
    net: &mut SegmentationNetwork<f32>,
    strategy: Option<FineTuneStrategy>,
    train_set: &[Sample],
    val_set: &[Sample],
    pipeline: &Pipeline,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(TrainError::EmptyData);
    }
    let config_hash = cfg.hash();
    let mut opt = Adam::new(cfg.adam);
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, Checkpoint)> = None;
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let lr = lr_schedule(cfg, epoch);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        let batches: Vec<Vec<&Sample>> = order
            .chunks(cfg.batch_size)
            .map(|c| c.iter().map(|&i| &train_set[i]).collect())
            .collect();

        let mut loss_sum = 0.0;
        let mut steps = 0usize;
        prefetch(
            cfg.prefetch,
            batches.iter().map(|b| move || pipeline.batch(b, Some(epoch))),
            |index, batch| -> Result<(), TrainError> {
                let batch = batch?;
                net.zero_grad();
                let logits = net.forward_train(&batch.images)?;
                let (value, dlogits) = loss_and_grad(&logits, &batch.masks, cfg.loss)?;
                if !value.is_finite() {
                    return Err(TrainError::NonFinite {
                        epoch,
                        batch: index,
                        value,
                    });
                }
                net.backward(&dlogits);
                opt.step(net, lr);
                loss_sum += value;
                steps += 1;
                Ok(())
            },
        )?;

        let report = metrics::evaluate(net, val_set, pipeline, cfg.threshold, Averaging::Micro, cfg.batch_size)?;
        let log = EpochLog {
            epoch,
            mean_train_loss: loss_sum / steps as f64,
            lr,
            val_dice: report.dice,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&log);
        if best.as_ref().is_none_or(|(d, _)| report.dice > *d) {
            let ckpt = Checkpoint::capture(net, strategy, &config_hash, epoch, Some(report.clone()));
            best = Some((report.dice, ckpt));
        }
        logs.push(log);
    }
    Ok(TrainOutcome {
        logs,
        best: best.expect("at least one epoch").1,
        steps: opt.steps_taken(),
    })
}

/// Metrics of `net` on `samples` (micro-averaged unless stated otherwise).
pub fn validate(
    net: &SegmentationNetwork<f32>,
    samples: &[Sample],
    pipeline: &Pipeline,
    cfg: &TrainConfig,
    averaging: Averaging,
) -> Result<MetricReport, TrainError> {
    Ok(metrics::evaluate(net, samples, pipeline, cfg.threshold, averaging, cfg.batch_size)?)
}
