use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-epoch learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Schedule {
    #[default]
    Constant,
    /// Shifted cosine annealing with hard restarts every `⌈T / num_cycles⌉`
    /// epochs. The last cycle is shorter when `T` is not a multiple.
    CosineCyclic { num_cycles: usize },
}

impl Schedule {
    pub fn validate(&self, total_epochs: usize) -> Result<()> {
        if let Schedule::CosineCyclic { num_cycles } = *self {
            if num_cycles == 0 {
                return Err(Error::Config("cosine-cyclic schedule needs num_cycles >= 1".into()));
            }
            if total_epochs < num_cycles {
                return Err(Error::Config(format!(
                    "{total_epochs} epochs cannot hold {num_cycles} cycles"
                )));
            }
            let len = cycle_length(total_epochs, num_cycles);
            if total_epochs.div_ceil(len) != num_cycles {
                return Err(Error::Config(format!(
                    "{total_epochs} epochs with cycle length {len} give {} cycles, not {num_cycles}",
                    total_epochs.div_ceil(len)
                )));
            }
        }
        Ok(())
    }

    /// Epoch indices (0-based) that end a cycle. Empty for a constant schedule.
    pub fn cycle_ends(&self, total_epochs: usize) -> Vec<usize> {
        match *self {
            Schedule::Constant => Vec::new(),
            Schedule::CosineCyclic { num_cycles } => {
                let len = cycle_length(total_epochs, num_cycles.max(1));
                (0..total_epochs)
                    .filter(|e| (e + 1) % len == 0 || e + 1 == total_epochs)
                    .collect()
            }
        }
    }
}

fn cycle_length(total_epochs: usize, num_cycles: usize) -> usize {
    total_epochs.div_ceil(num_cycles).max(1)
}

/// Learning rate for `epoch` (0-based) out of `total_epochs`.
pub fn lr_at(schedule: &Schedule, epoch: usize, total_epochs: usize, initial_lr: f64) -> Result<f64> {
    if epoch >= total_epochs {
        return Err(Error::Index(format!("epoch {epoch} of {total_epochs}")));
    }
    match *schedule {
        Schedule::Constant => Ok(initial_lr),
        Schedule::CosineCyclic { num_cycles } => {
            if num_cycles == 0 {
                return Err(Error::Config("cosine-cyclic schedule needs num_cycles >= 1".into()));
            }
            let len = cycle_length(total_epochs, num_cycles);
            let start = (epoch / len) * len;
            let this_len = len.min(total_epochs - start);
            let t = (epoch - start) as f64;
            Ok(initial_lr / 2.0 * ((std::f64::consts::PI * t / this_len as f64).cos() + 1.0))
        }
    }
}
