use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ensembles::{EnsembleConfig, FastInit, ModelSpec, Strategy};
use crate::error::{Error, Result};
use crate::evaluation::{CostWeights, DEFAULT_THRESHOLDS};
use crate::nn::{Schedule, TrainConfig};
use crate::synth::DatasetSpec;

/// Settings applied to every roster entry unless the entry overrides them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelDefaults {
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    pub batch_fast_lr_multiplier: f64,
    pub mimo_input_repetition: f64,
    pub mimo_batch_repetition: usize,
}

impl Default for ModelDefaults {
    fn default() -> Self {
        Self {
            hidden: vec![160, 64],
            train: TrainConfig {
                epochs: 24,
                ..TrainConfig::default()
            },
            batch_fast_lr_multiplier: 0.5,
            mimo_input_repetition: 0.0,
            mimo_batch_repetition: 1,
        }
    }
}

/// One roster entry. Unset fields fall back to [`ModelDefaults`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    /// Output label; defaults to e.g. `deep-m4`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub strategy: Strategy,
    #[serde(default = "one")]
    pub members: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l2_penalty: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_fast_lr_multiplier: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mimo_input_repetition: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mimo_batch_repetition: Option<usize>,
}

fn one() -> usize {
    1
}

impl ModelEntry {
    pub fn new(strategy: Strategy, members: usize) -> Self {
        Self {
            name: None,
            strategy,
            members,
            hidden: None,
            epochs: None,
            batch_size: None,
            initial_lr: None,
            l2_penalty: None,
            batch_fast_lr_multiplier: None,
            mimo_input_repetition: None,
            mimo_batch_repetition: None,
        }
    }

    /// Builds the full ensemble config. Snapshot entries always get a
    /// cosine-cyclic schedule with one cycle per member.
    pub fn resolve(&self, defaults: &ModelDefaults, input_dim: usize, classes: usize) -> EnsembleConfig {
        let mut train = defaults.train.clone();
        if let Some(e) = self.epochs {
            train.epochs = e;
        }
        if let Some(b) = self.batch_size {
            train.batch_size = b;
        }
        if let Some(lr) = self.initial_lr {
            train.initial_lr = lr;
        }
        if let Some(l2) = self.l2_penalty {
            train.l2_penalty = l2;
        }
        if self.strategy == Strategy::Snapshot {
            train.schedule = Schedule::CosineCyclic { num_cycles: self.members };
        }
        EnsembleConfig {
            strategy: self.strategy,
            members: self.members,
            model: ModelSpec {
                input_dim,
                hidden: self.hidden.clone().unwrap_or_else(|| defaults.hidden.clone()),
                classes,
            },
            train,
            batch_fast_lr_multiplier: self.batch_fast_lr_multiplier.unwrap_or(defaults.batch_fast_lr_multiplier),
            batch_fast_init: FastInit::RandomSign,
            mimo_input_repetition: self.mimo_input_repetition.unwrap_or(defaults.mimo_input_repetition),
            mimo_batch_repetition: self.mimo_batch_repetition.unwrap_or(defaults.mimo_batch_repetition),
        }
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| match self.strategy {
            Strategy::Single => "single".into(),
            s => format!("{}-m{}", s.name(), self.members),
        })
    }
}

/// Optional exhaustive search; every combination is trained on the first
/// seed and the one with the lowest validation NLL is used for all seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub initial_lr: Vec<f64>,
    pub l2_penalty: Vec<f64>,
}

impl GridSpec {
    pub fn is_empty(&self) -> bool {
        self.initial_lr.is_empty() && self.l2_penalty.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub betas: Vec<f64>,
    pub histogram_bins: usize,
    pub nra_thresholds: usize,
    /// Repetitions of the evaluation pass; the median is reported.
    pub eval_repeats: usize,
    /// Random horizontal/vertical flips of training images.
    pub augment: bool,
    pub dataset: DatasetSpec,
    pub cost_weights: CostWeights,
    pub defaults: ModelDefaults,
    pub grid: GridSpec,
    pub models: Vec<ModelEntry>,
    /// Where `run` writes; the CLI's `--out` takes precedence.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Worker threads for independent cells.
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2, 3, 4],
            betas: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            histogram_bins: 40,
            nra_thresholds: DEFAULT_THRESHOLDS,
            eval_repeats: 3,
            augment: true,
            dataset: DatasetSpec::default(),
            cost_weights: CostWeights::default(),
            defaults: ModelDefaults::default(),
            grid: GridSpec::default(),
            models: default_roster(),
            output_dir: None,
            jobs: 1,
        }
    }
}

/// single, deep {4, 8}, snapshot {4, 6, 8}, batch {4, 8}, MIMO {3, 4}.
/// Batch and MIMO train 50% longer than the others.
pub fn default_roster() -> Vec<ModelEntry> {
    let base = ModelDefaults::default().train.epochs;
    let longer = base + base / 2;
    let mut roster = vec![ModelEntry::new(Strategy::Single, 1)];
    roster.extend([4, 8].map(|m| ModelEntry::new(Strategy::Deep, m)));
    roster.extend([4, 6, 8].map(|m| ModelEntry::new(Strategy::Snapshot, m)));
    for (m, mult) in [(4, 0.5), (8, 0.4)] {
        let mut e = ModelEntry::new(Strategy::Batch, m);
        e.epochs = Some(longer);
        e.batch_fast_lr_multiplier = Some(mult);
        roster.push(e);
    }
    for (m, rho) in [(3, 0.3), (4, 0.8)] {
        let mut e = ModelEntry::new(Strategy::Mimo, m);
        e.epochs = Some(longer);
        e.mimo_input_repetition = Some(rho);
        roster.push(e);
    }
    roster
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.cost_weights.validate()?;
        if self.models.is_empty() {
            return Err(Error::Config("the model roster is empty".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if self.betas.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
            return Err(Error::Config("betas must be positive".into()));
        }
        if self.histogram_bins == 0 || self.nra_thresholds < 2 || self.eval_repeats < 3 {
            return Err(Error::Config(
                "need histogram_bins >= 1, nra_thresholds >= 2 and eval_repeats >= 3".into(),
            ));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be >= 1".into()));
        }
        if self.grid.initial_lr.iter().chain(&self.grid.l2_penalty).any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("grid values must be finite and nonnegative".into()));
        }
        let mut labels = BTreeSet::new();
        for entry in &self.models {
            let label = entry.label();
            if !labels.insert(label.clone()) {
                return Err(Error::Config(format!("duplicate model label `{label}`; set `name` to disambiguate")));
            }
            if label.is_empty() || label.contains(['/', '\\']) || label.starts_with('.') {
                return Err(Error::Config(format!("model label `{label}` is not a valid directory name")));
            }
            self.resolve(entry)
                .validate()
                .map_err(|e| Error::Config(format!("model `{label}`: {e}")))?;
        }
        if self.reference_model().is_none() {
            return Err(Error::Config("the roster needs a `single` model as the cost reference".into()));
        }
        Ok(())
    }

    pub fn resolve(&self, entry: &ModelEntry) -> EnsembleConfig {
        entry.resolve(&self.defaults, self.dataset.pixels(), self.dataset.id_classes.len())
    }

    /// Label of the first single network in the roster.
    pub fn reference_model(&self) -> Option<String> {
        self.models.iter().find(|m| m.strategy == Strategy::Single).map(ModelEntry::label)
    }

    /// The configuration with execution-only settings (output location,
    /// thread count) removed. This is what the hash covers.
    pub fn hashed_view(&self) -> Self {
        Self {
            output_dir: None,
            jobs: 1,
            ..self.clone()
        }
    }

    /// SHA-256 over the canonical JSON of [`Self::hashed_view`].
    pub fn hash(&self) -> Result<String> {
        let canonical = serde_json::to_vec(&self.hashed_view())?;
        Ok(crate::synth::hex(&Sha256::digest(&canonical)))
    }
}
