//! Self-supervised pretraining of the encoder and the angular head.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::data::PretrainSet;
use super::loss::pretrain_loss;
use crate::error::{Error, Result};
use crate::labels::AngularDistribution;
use crate::nn::optim::{sgd_step, StepDecay};
use crate::nn::{AngularHead, Encoder, Mode, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub iterations: usize,
    /// Snapshots per iteration.
    pub batch_size: usize,
    pub lr_encoder: f64,
    pub lr_fn1: f64,
    /// Number of angular bins `K`.
    pub bins: usize,
    pub lr_decay: f64,
    /// Iterations between learning-rate decays.
    pub decay_every: usize,
    /// Drop snapshots in which the cameras detected nothing instead of
    /// training them towards the all-zeros target.
    pub drop_undetected: bool,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            iterations: 3000,
            batch_size: 64,
            lr_encoder: 1e-3,
            lr_fn1: 1e-3,
            bins: 30,
            lr_decay: 0.9,
            decay_every: 100,
            drop_undetected: false,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.bins == 0 {
            return Err(Error::Config("pretrain batch_size and bins must be positive".into()));
        }
        if !(self.lr_encoder > 0.0 && self.lr_fn1 > 0.0 && self.lr_decay > 0.0) {
            return Err(Error::Config("pretrain learning rates and decay must be positive".into()));
        }
        Ok(())
    }
}

/// Snapshot indices of one iteration: `batch` distinct indices, or every
/// index in order when the batch covers the whole set.
pub fn sample_snapshots<R: Rng + ?Sized>(len: usize, batch: usize, rng: &mut R) -> Vec<usize> {
    if batch >= len {
        (0..len).collect()
    } else {
        sample(rng, len, batch).into_vec()
    }
}

/// Forward and backward pass on one batch; leaves gradients in the
/// parameters and returns the loss.
pub fn pretrain_step(
    encoder: &mut Encoder,
    head: &mut AngularHead,
    x: &Tensor,
    segments: &[std::ops::Range<usize>],
    targets: &[AngularDistribution],
) -> Result<f64> {
    let z = encoder.forward(x, Mode::Train)?;
    let g = head.forward(&z)?;
    let (loss, dg) = pretrain_loss(g.data(), head.bins(), segments, targets)?;
    let dz = head.backward(&Tensor::new(g.shape().to_vec(), dg)?)?;
    encoder.backward(&dz)?;
    Ok(loss)
}

/// Runs the configured number of iterations and returns the per-iteration
/// loss. A non-finite loss aborts with the offending iteration.
pub fn pretrain<R: Rng + ?Sized>(
    encoder: &mut Encoder,
    head: &mut AngularHead,
    data: &PretrainSet,
    cfg: &PretrainConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("pretraining set is empty".into()));
    }
    if head.bins() != cfg.bins {
        return Err(Error::shape("angular head bins", cfg.bins, head.bins()));
    }
    let lr_e = StepDecay::new(cfg.lr_encoder, cfg.lr_decay, cfg.decay_every);
    let lr_f = StepDecay::new(cfg.lr_fn1, cfg.lr_decay, cfg.decay_every);
    let mut losses = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let idx = sample_snapshots(data.len(), cfg.batch_size, rng);
        let (x, segs, targets) = data.batch(&idx)?;
        let loss = pretrain_step(encoder, head, &x, &segs, &targets)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                stage: "pretrain",
                step: it,
            });
        }
        sgd_step(encoder, lr_e.at(it));
        sgd_step(head, lr_f.at(it));
        losses.push(loss);
    }
    Ok(losses)
}

/// Loss of the current parameters on a batch, without updating anything
/// other than batch-norm running statistics.
pub fn pretrain_loss_on(
    encoder: &mut Encoder,
    head: &mut AngularHead,
    data: &PretrainSet,
    snapshots: &[usize],
) -> Result<f64> {
    let (x, segs, targets) = data.batch(snapshots)?;
    let z = encoder.forward(&x, Mode::Train)?;
    let g = head.forward(&z)?;
    Ok(pretrain_loss(g.data(), head.bins(), &segs, &targets)?.0)
}
