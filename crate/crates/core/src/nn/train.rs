use std::ops::Range;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::loss_and_grad;
use super::{lr_at, Adam, Network, Schedule, Targets};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Optimisation hyperparameters shared by every strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub l2_penalty: f64,
    pub schedule: Schedule,
    pub seed: u64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            initial_lr: 1e-3,
            l2_penalty: 1e-4,
            schedule: Schedule::Constant,
            seed: 0,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::Config(format!("initial_lr must be positive, got {}", self.initial_lr)));
        }
        if !(self.l2_penalty >= 0.0 && self.l2_penalty.is_finite()) {
            return Err(Error::Config(format!("l2_penalty must be nonnegative, got {}", self.l2_penalty)));
        }
        let (b1, b2) = self.adam_betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config("adam_eps must be positive".into()));
        }
        self.schedule.validate(self.epochs)
    }
}

/// Supplies the minibatches of one training strategy.
pub trait BatchSource {
    /// Number of example slots per epoch.
    fn examples(&self) -> usize;
    fn begin_epoch(&mut self, rng: &mut ChaCha8Rng) -> Result<()>;
    /// Inputs and targets for slots `range` of the current epoch.
    fn batch(&mut self, rng: &mut ChaCha8Rng, range: Range<usize>) -> Result<(Tensor, Targets)>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
}

/// Runs the minibatch Adam loop. `on_epoch_end` sees the network after each
/// epoch's last update.
pub fn fit<S: BatchSource>(
    net: &mut Network,
    source: &mut S,
    cfg: &TrainConfig,
    fast_lr_multiplier: f64,
    rng: &mut ChaCha8Rng,
    mut on_epoch_end: impl FnMut(&EpochReport, &Network) -> Result<()>,
) -> Result<Vec<EpochReport>> {
    cfg.validate()?;
    let n = source.examples();
    if n == 0 {
        return Err(Error::Validation("empty training set".into()));
    }
    let mut adam = Adam::new(net, cfg.adam_betas, cfg.adam_eps, fast_lr_multiplier);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = lr_at(&cfg.schedule, epoch, cfg.epochs, cfg.initial_lr)?;
        source.begin_epoch(rng)?;
        let mut total = 0.0;
        let mut start = 0;
        while start < n {
            let end = (start + cfg.batch_size).min(n);
            let (inputs, targets) = source.batch(rng, start..end)?;
            net.zero_grad();
            let logits = net.forward(&inputs)?;
            let (loss, grad) = loss_and_grad(&logits, &targets)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("loss at epoch {epoch}, slot {start}")));
            }
            net.backward(&grad)?;
            if net.params().iter().any(|p| !p.grad.all_finite()) {
                return Err(Error::NonFinite(format!("gradient at epoch {epoch}, slot {start}")));
            }
            adam.step(net, lr, cfg.l2_penalty)?;
            total += loss * (end - start) as f64;
            start = end;
        }
        let report = EpochReport {
            epoch,
            lr,
            mean_loss: total / n as f64,
        };
        on_epoch_end(&report, net)?;
        history.push(report);
    }
    Ok(history)
}
