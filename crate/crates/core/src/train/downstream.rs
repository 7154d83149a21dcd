//! Supervised fine-tuning of the encoder and the polar head.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::data::LabeledSet;
use super::eval::{evaluate_downstream, EvalReport};
use super::loss::downstream_loss;
use crate::error::{Error, Result};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::optim::{sgd_step, StepDecay};
use crate::nn::{Encoder, Mode, PolarHead, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DownstreamConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Encoder learning rate when starting from a pretrained encoder.
    pub lr_encoder: f64,
    pub lr_fn2: f64,
    /// Learning rate of both networks when training from scratch.
    pub baseline_lr: f64,
    pub lr_decay: f64,
    /// Epochs between learning-rate decays.
    pub decay_every: usize,
    /// Epochs between validation passes; 0 disables them.
    pub eval_every: usize,
}

impl Default for DownstreamConfig {
    fn default() -> Self {
        Self {
            epochs: 3000,
            batch_size: 32,
            lr_encoder: 1e-3 / 20.0,
            lr_fn2: 1e-3,
            baseline_lr: 1e-3,
            lr_decay: 0.9,
            decay_every: 100,
            eval_every: 50,
        }
    }
}

impl DownstreamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("downstream batch_size must be positive".into()));
        }
        if !(self.lr_encoder > 0.0 && self.lr_fn2 > 0.0 && self.baseline_lr > 0.0 && self.lr_decay > 0.0) {
            return Err(Error::Config("downstream learning rates and decay must be positive".into()));
        }
        Ok(())
    }

    /// `(encoder, fn2)` initial learning rates.
    pub fn learning_rates(&self, pretrained: bool) -> (f64, f64) {
        if pretrained {
            (self.lr_encoder, self.lr_fn2)
        } else {
            (self.baseline_lr, self.baseline_lr)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationPoint {
    pub epoch: usize,
    pub mean_positioning_error: f64,
    pub mae_azimuth: f64,
    pub mae_distance: f64,
}

#[derive(Debug, Clone)]
pub struct DownstreamOutcome {
    /// Sample-weighted mean loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub validation: Vec<ValidationPoint>,
    /// Epoch (1-based) and report of the lowest validation positioning error.
    pub best: Option<(usize, EvalReport)>,
    /// Parameters at the best epoch, with a zero config hash.
    pub best_params: Option<Checkpoint>,
}

/// Forward and backward pass on one batch; leaves gradients in the
/// parameters and returns the loss.
pub fn downstream_step(encoder: &mut Encoder, head: &mut PolarHead, x: &Tensor, truth_xy: &[[f64; 2]]) -> Result<f64> {
    let z = encoder.forward(x, Mode::Train)?;
    let p = head.forward(&z)?;
    let (loss, dp) = downstream_loss(p.data(), truth_xy)?;
    let dz = head.backward(&Tensor::new(p.shape().to_vec(), dp)?)?;
    encoder.backward(&dz)?;
    Ok(loss)
}

/// Trains for `cfg.epochs` epochs, each a fresh permutation of `train` split
/// into batches. When `pretrained` is false the baseline learning rate is used
/// for both networks. With a validation set, metrics are recorded every
/// `eval_every` epochs and after the last one.
pub fn downstream_train<R: Rng + ?Sized>(
    encoder: &mut Encoder,
    head: &mut PolarHead,
    train: &LabeledSet,
    validation: Option<&LabeledSet>,
    cfg: &DownstreamConfig,
    pretrained: bool,
    rng: &mut R,
) -> Result<DownstreamOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Config("labeled training set is empty".into()));
    }
    let (lr_e0, lr_f0) = cfg.learning_rates(pretrained);
    let lr_e = StepDecay::new(lr_e0, cfg.lr_decay, cfg.decay_every);
    let lr_f = StepDecay::new(lr_f0, cfg.lr_decay, cfg.decay_every);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut outcome = DownstreamOutcome {
        epoch_losses: Vec::with_capacity(cfg.epochs),
        validation: Vec::new(),
        best: None,
        best_params: None,
    };
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, truth) = train.batch(chunk)?;
            let loss = downstream_step(encoder, head, &x, &truth)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    stage: "downstream",
                    step,
                });
            }
            sgd_step(encoder, lr_e.at(epoch));
            sgd_step(head, lr_f.at(epoch));
            total += loss * chunk.len() as f64;
            step += 1;
        }
        outcome.epoch_losses.push(total / train.len() as f64);
        let done = epoch + 1;
        let due = cfg.eval_every > 0 && done % cfg.eval_every == 0;
        if let Some(val) = validation.filter(|_| due || done == cfg.epochs) {
            let report = evaluate_downstream(encoder, head, val)?;
            outcome.validation.push(ValidationPoint {
                epoch: done,
                mean_positioning_error: report.mean_positioning_error,
                mae_azimuth: report.mae_azimuth,
                mae_distance: report.mae_distance,
            });
            let better = outcome
                .best
                .as_ref()
                .is_none_or(|(_, b)| report.mean_positioning_error < b.mean_positioning_error);
            if better {
                outcome.best = Some((done, report));
                outcome.best_params = Some(Checkpoint::capture(0, &[&*encoder, &*head]));
            }
        }
    }
    Ok(outcome)
}
