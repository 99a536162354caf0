use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{LayerSpec, Schedule, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Single,
    Deep,
    Snapshot,
    Batch,
    Mimo,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Single => "single",
            Strategy::Deep => "deep",
            Strategy::Snapshot => "snapshot",
            Strategy::Batch => "batch",
            Strategy::Mimo => "mimo",
        }
    }
}

/// Dense architecture: raw input width, hidden widths (ReLU after each) and
/// number of classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FastInit {
    #[default]
    RandomSign,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub strategy: Strategy,
    pub members: usize,
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_fast_multiplier")]
    pub batch_fast_lr_multiplier: f64,
    #[serde(default)]
    pub batch_fast_init: FastInit,
    #[serde(default)]
    pub mimo_input_repetition: f64,
    #[serde(default = "one")]
    pub mimo_batch_repetition: usize,
}

fn default_fast_multiplier() -> f64 {
    0.5
}

fn one() -> usize {
    1
}

impl EnsembleConfig {
    pub fn new(strategy: Strategy, members: usize, model: ModelSpec, train: TrainConfig) -> Self {
        Self {
            strategy,
            members,
            model,
            train,
            batch_fast_lr_multiplier: default_fast_multiplier(),
            batch_fast_init: FastInit::RandomSign,
            mimo_input_repetition: 0.0,
            mimo_batch_repetition: 1,
        }
    }

    /// Short identifier such as `single` or `batch-m4`.
    pub fn label(&self) -> String {
        match self.strategy {
            Strategy::Single => "single".into(),
            s => format!("{}-m{}", s.name(), self.members),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let m = self.members;
        match self.strategy {
            Strategy::Single if m != 1 => {
                return Err(Error::Config(format!("single network must have 1 member, got {m}")));
            }
            Strategy::Single => {}
            _ if m < 2 => {
                return Err(Error::Config(format!("{} ensemble needs at least 2 members", self.strategy.name())));
            }
            _ => {}
        }
        if self.strategy == Strategy::Snapshot
            && self.train.schedule != (Schedule::CosineCyclic { num_cycles: m })
        {
            return Err(Error::Config(format!(
                "snapshot ensemble with {m} members needs a cosine-cyclic schedule with {m} cycles"
            )));
        }
        if self.model.input_dim == 0 || self.model.classes < 2 || self.model.hidden.contains(&0) {
            return Err(Error::Config(format!("degenerate model {:?}", self.model)));
        }
        if !(self.batch_fast_lr_multiplier > 0.0 && self.batch_fast_lr_multiplier <= 1.0) {
            return Err(Error::Config("batch_fast_lr_multiplier must lie in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.mimo_input_repetition) {
            return Err(Error::Config("mimo_input_repetition must lie in [0, 1]".into()));
        }
        if self.mimo_batch_repetition == 0 {
            return Err(Error::Config("mimo_batch_repetition must be >= 1".into()));
        }
        Ok(())
    }

    /// Layer stack of the trained network (one member for deep/snapshot).
    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let m = self.members;
        let ModelSpec { input_dim, ref hidden, classes } = self.model;
        let input = if self.strategy == Strategy::Mimo { input_dim * m } else { input_dim };
        let mut widths = vec![input];
        widths.extend(hidden);
        let mut specs = Vec::new();
        for pair in widths.windows(2) {
            specs.push(match self.strategy {
                Strategy::Batch => LayerSpec::BatchDense { inputs: pair[0], outputs: pair[1], members: m },
                _ => LayerSpec::Dense { inputs: pair[0], outputs: pair[1] },
            });
            specs.push(LayerSpec::Relu);
        }
        let last = *widths.last().expect("input width");
        specs.push(match self.strategy {
            Strategy::Batch => LayerSpec::BatchDense { inputs: last, outputs: classes, members: m },
            Strategy::Mimo => LayerSpec::Heads { inputs: last, outputs: classes, heads: m },
            _ => LayerSpec::Dense { inputs: last, outputs: classes },
        });
        specs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ModelSpec {
        ModelSpec { input_dim: 4, hidden: vec![3], classes: 2 }
    }

    #[test]
    fn member_count_rules() {
        let t = TrainConfig::default();
        assert!(EnsembleConfig::new(Strategy::Single, 1, model(), t.clone()).validate().is_ok());
        assert!(EnsembleConfig::new(Strategy::Single, 2, model(), t.clone()).validate().is_err());
        assert!(EnsembleConfig::new(Strategy::Deep, 1, model(), t.clone()).validate().is_err());
        assert!(EnsembleConfig::new(Strategy::Batch, 4, model(), t.clone()).validate().is_ok());
    }

    #[test]
    fn snapshot_needs_matching_cycles() {
        let mut t = TrainConfig { epochs: 12, ..TrainConfig::default() };
        assert!(EnsembleConfig::new(Strategy::Snapshot, 3, model(), t.clone()).validate().is_err());
        t.schedule = Schedule::CosineCyclic { num_cycles: 4 };
        assert!(EnsembleConfig::new(Strategy::Snapshot, 3, model(), t.clone()).validate().is_err());
        t.schedule = Schedule::CosineCyclic { num_cycles: 3 };
        assert!(EnsembleConfig::new(Strategy::Snapshot, 3, model(), t).validate().is_ok());
    }

    #[test]
    fn hyperparameter_ranges() {
        let mut c = EnsembleConfig::new(Strategy::Batch, 2, model(), TrainConfig::default());
        c.batch_fast_lr_multiplier = 0.0;
        assert!(c.validate().is_err());
        c.batch_fast_lr_multiplier = 1.0;
        c.mimo_input_repetition = 1.2;
        assert!(c.validate().is_err());
    }

    #[test]
    fn mimo_widens_input_and_splits_heads() {
        let c = EnsembleConfig::new(Strategy::Mimo, 3, model(), TrainConfig::default());
        assert_eq!(
            c.layer_specs(),
            vec![
                LayerSpec::Dense { inputs: 12, outputs: 3 },
                LayerSpec::Relu,
                LayerSpec::Heads { inputs: 3, outputs: 2, heads: 3 },
            ]
        );
        assert_eq!(c.label(), "mimo-m3");
    }
}
