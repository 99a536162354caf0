//! Ensemble construction and training: independent deep ensembles, snapshot
//! ensembles from a cyclic schedule, batch ensembles with rank-1 fast weights,
//! and multi-input multi-output networks.

mod config;
mod predictor;
mod sources;

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{EnsembleConfig, FastInit, ModelSpec, Strategy};
pub use predictor::{Body, EnsemblePredictor};
pub use sources::{MimoSource, PlainSource, TrainingData};

use crate::error::{Error, Result};
use crate::nn::params_io::{read_f64_file, write_f64_file};
use crate::nn::{fit, EpochReport, Network};

/// Odd 32-bit golden-ratio increment separating the seeds of deep-ensemble members.
pub const MEMBER_SEED_STRIDE: u64 = 0x9E37_79B9;

pub fn member_seed(base: u64, member: usize) -> u64 {
    base.wrapping_add((member as u64).wrapping_mul(MEMBER_SEED_STRIDE))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub predictor: EnsemblePredictor,
    /// One loss history per optimisation run (M for deep ensembles, else 1).
    pub histories: Vec<Vec<EpochReport>>,
    /// 1-based epochs at which snapshots were taken; empty for other strategies.
    pub snapshot_epochs: Vec<usize>,
}

fn check_data(cfg: &EnsembleConfig, data: &TrainingData) -> Result<()> {
    cfg.validate()?;
    if data.dim() != cfg.model.input_dim {
        return Err(Error::Dimension(format!(
            "model expects {} features, data has {}",
            cfg.model.input_dim,
            data.dim()
        )));
    }
    if let Some(&bad) = data.labels.iter().find(|&&y| y >= cfg.model.classes) {
        return Err(Error::Index(format!("label {bad} with {} classes", cfg.model.classes)));
    }
    Ok(())
}

fn predictor(cfg: &EnsembleConfig, body: Body) -> EnsemblePredictor {
    EnsemblePredictor {
        strategy: cfg.strategy,
        members: cfg.members,
        input_dim: cfg.model.input_dim,
        classes: cfg.model.classes,
        body,
    }
}

/// Trains `members` networks from independent seeds (also covers the single network).
pub fn train_deep(cfg: &EnsembleConfig, data: TrainingData) -> Result<TrainOutcome> {
    check_data(cfg, &data)?;
    let specs = cfg.layer_specs();
    let mut nets = Vec::with_capacity(cfg.members);
    let mut histories = Vec::with_capacity(cfg.members);
    for member in 0..cfg.members {
        let mut rng = ChaCha8Rng::seed_from_u64(member_seed(cfg.train.seed, member));
        let mut net = Network::build(&specs, &mut rng)?;
        let mut source = PlainSource::new(data, 1);
        histories.push(fit(&mut net, &mut source, &cfg.train, 1.0, &mut rng, |_, _| Ok(()))?);
        nets.push(net);
    }
    Ok(TrainOutcome {
        predictor: predictor(cfg, Body::Members(nets)),
        histories,
        snapshot_epochs: Vec::new(),
    })
}

/// One run under the cyclic schedule; a copy of the weights is kept at the
/// end of every cycle. With `spill_dir` the snapshots are parked on disk
/// until training finishes instead of being held in memory.
pub fn train_snapshot(cfg: &EnsembleConfig, data: TrainingData, spill_dir: Option<&Path>) -> Result<TrainOutcome> {
    check_data(cfg, &data)?;
    if cfg.strategy != Strategy::Snapshot {
        return Err(Error::Config(format!("{} config passed to snapshot trainer", cfg.strategy.name())));
    }
    let ends = cfg.train.schedule.cycle_ends(cfg.train.epochs);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let mut net = Network::build(&cfg.layer_specs(), &mut rng)?;
    if let Some(dir) = spill_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut kept: Vec<Network> = Vec::new();
    let mut spilled = Vec::new();
    let mut source = PlainSource::new(data, 1);
    let history = fit(&mut net, &mut source, &cfg.train, 1.0, &mut rng, |report, current| {
        if !ends.contains(&report.epoch) {
            return Ok(());
        }
        match spill_dir {
            Some(dir) => {
                let path = dir.join(format!("snapshot_{}.bin", spilled.len()));
                write_f64_file(&path, &current.flat_params())?;
                spilled.push(path);
            }
            None => kept.push(current.clone()),
        }
        Ok(())
    })?;
    for path in &spilled {
        let mut snap = net.clone();
        snap.load_flat_params(&read_f64_file(path)?)?;
        kept.push(snap);
        fs::remove_file(path).map_err(|e| Error::io(path, e))?;
    }
    if kept.len() != cfg.members {
        return Err(Error::Validation(format!("collected {} snapshots, expected {}", kept.len(), cfg.members)));
    }
    Ok(TrainOutcome {
        predictor: predictor(cfg, Body::Members(kept)),
        histories: vec![history],
        snapshot_epochs: ends.iter().map(|e| e + 1).collect(),
    })
}

/// Trains the shared slow weights and per-member fast weights jointly on
/// minibatches tiled once per member.
pub fn train_batch_ensemble(cfg: &EnsembleConfig, data: TrainingData) -> Result<TrainOutcome> {
    check_data(cfg, &data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let mut net = Network::build(&cfg.layer_specs(), &mut rng)?;
    let mut source = PlainSource::new(data, cfg.members);
    let history = fit(&mut net, &mut source, &cfg.train, cfg.batch_fast_lr_multiplier, &mut rng, |_, _| Ok(()))?;
    Ok(TrainOutcome {
        predictor: predictor(cfg, Body::Batch(net)),
        histories: vec![history],
        snapshot_epochs: Vec::new(),
    })
}

pub fn train_mimo(cfg: &EnsembleConfig, data: TrainingData) -> Result<TrainOutcome> {
    check_data(cfg, &data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let mut net = Network::build(&cfg.layer_specs(), &mut rng)?;
    let mut source = MimoSource::new(data, cfg.members, cfg.mimo_input_repetition, cfg.mimo_batch_repetition);
    let history = fit(&mut net, &mut source, &cfg.train, 1.0, &mut rng, |_, _| Ok(()))?;
    Ok(TrainOutcome {
        predictor: predictor(cfg, Body::Mimo(net)),
        histories: vec![history],
        snapshot_epochs: Vec::new(),
    })
}

/// Dispatches on `cfg.strategy`. `scratch` is only used by snapshot
/// ensembles, which park their snapshots there.
pub fn train(cfg: &EnsembleConfig, data: TrainingData, scratch: Option<&Path>) -> Result<TrainOutcome> {
    match cfg.strategy {
        Strategy::Single | Strategy::Deep => train_deep(cfg, data),
        Strategy::Snapshot => train_snapshot(cfg, data, scratch),
        Strategy::Batch => train_batch_ensemble(cfg, data),
        Strategy::Mimo => train_mimo(cfg, data),
    }
}
