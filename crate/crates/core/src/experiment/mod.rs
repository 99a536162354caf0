//! Seeded experiment runner.
//!
//! Output layout under the output directory:
//!
//! ```text
//! experiment.json            config hash + the hashed configuration
//! dataset.json               split sizes
//! grid.json                  validation NLL per grid point (only with a grid)
//! run_log.json               status of every (model, seed) cell
//! cells/<model>/seed_<s>/    report.json, nra.csv, uncertainty.csv, model/,
//!                            timing.json, cost.json
//! nra/<model>.csv            per-threshold mean and std across seeds
//! summary.csv                accuracy, NLL, DQ and uncertainty per model
//! dq_beta.csv                DQ_β per model and β
//! cost.csv, bubble.csv       timing-derived cost tables
//! ```
//!
//! Only `timing.json`, `cost.json`, `cost.csv` and `bubble.csv` contain
//! wall-clock measurements; every other file is a deterministic function of
//! the configuration.

mod aggregate;
mod cell;
mod config;
mod files;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

pub use aggregate::{load_reports, report, sweep_beta, AggregateSummary, ModelSummary};
pub use cell::{cell_nra_curve, BoundsCheck, CellReport, CellTiming, Histogram, UncertaintyHistograms, UncertaintySummary};
pub use config::{default_roster, ExperimentConfig, GridSpec, ModelDefaults, ModelEntry};
pub use files::read_hashed_csv;

use crate::ensembles::{train, EnsembleConfig, TrainingData};
use crate::error::{Error, Result};
use crate::synth::{generate as generate_dataset, write_dataset, SplitDataset};
use crate::uncertainty::{ensemble_mean, nll};
use cell::{run_cell, CellContext};
use files::{read_json, write_json};

pub const MANIFEST_FILE: &str = "experiment.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub config_hash: String,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub config_hash: String,
    pub train: usize,
    pub validation: usize,
    pub id_test: usize,
    pub ood_test: usize,
    pub pixels: usize,
}

impl DatasetSummary {
    fn of(ds: &SplitDataset, hash: &str) -> Self {
        Self {
            config_hash: hash.to_string(),
            train: ds.train.len(),
            validation: ds.validation.len(),
            id_test: ds.id_test.len(),
            ood_test: ds.ood_test.len(),
            pixels: ds.spec.pixels(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStatus {
    pub model: String,
    pub seed: u64,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub config_hash: String,
    pub cells: Vec<CellStatus>,
}

impl RunLog {
    pub fn failures(&self) -> impl Iterator<Item = &CellStatus> {
        self.cells.iter().filter(|c| !c.ok)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub initial_lr: f64,
    pub l2_penalty: f64,
    pub validation_nll: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub model: String,
    pub points: Vec<GridPoint>,
    pub selected: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides `output_dir` from the config.
    pub out: Option<PathBuf>,
    /// Hold a process-wide lock around every measured section so parallel
    /// cells never overlap while being timed.
    pub exclusive_timing: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub out: PathBuf,
    pub log: RunLog,
    pub summary: Option<AggregateSummary>,
}

pub(crate) fn cells_dir(out: &Path) -> PathBuf {
    out.join("cells")
}

pub fn cell_dir(out: &Path, model: &str, seed: u64) -> PathBuf {
    cells_dir(out).join(model).join(format!("seed_{seed}"))
}

fn output_dir(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<PathBuf> {
    opts.out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| Error::Config("no output directory: pass --out or set output_dir".into()))
}

/// Refuses to reuse a directory that holds results of a different config.
fn claim_output(out: &Path, hash: &str) -> Result<()> {
    let path = out.join(MANIFEST_FILE);
    if path.exists() {
        let existing: ExperimentManifest = read_json(&path)?;
        if existing.config_hash != hash {
            return Err(Error::Validation(format!(
                "{} already holds results for config {}; use a fresh output directory",
                out.display(),
                existing.config_hash
            )));
        }
    }
    Ok(())
}

/// Generates the dataset and writes it as a binary container plus a summary.
pub fn generate(cfg: &ExperimentConfig, out: &Path) -> Result<DatasetSummary> {
    cfg.dataset.validate()?;
    let hash = cfg.hash()?;
    let ds = generate_dataset(&cfg.dataset)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_dataset(&ds, &out.join("dataset.bin"))?;
    let summary = DatasetSummary::of(&ds, &hash);
    write_json(&out.join("dataset.json"), &summary)?;
    Ok(summary)
}

fn grid_search(cfg: &ExperimentConfig, ds: &SplitDataset, base: &EnsembleConfig, label: &str) -> GridResult {
    let lrs = if cfg.grid.initial_lr.is_empty() { vec![base.train.initial_lr] } else { cfg.grid.initial_lr.clone() };
    let l2s = if cfg.grid.l2_penalty.is_empty() { vec![base.train.l2_penalty] } else { cfg.grid.l2_penalty.clone() };
    let mut points = Vec::new();
    let mut best: Option<(f64, f64, f64)> = None;
    for &lr in &lrs {
        for &l2 in &l2s {
            let mut trial = base.clone();
            trial.train.initial_lr = lr;
            trial.train.l2_penalty = l2;
            trial.train.seed = cfg.seeds[0];
            let scored = (|| -> Result<f64> {
                let mut data = TrainingData::new(&ds.train.images, &ds.train.labels)?;
                if cfg.augment {
                    data = data.with_flips(ds.spec.image_side);
                }
                let outcome = train(&trial, data, None)?;
                let probs = outcome.predictor.predict_members(&ds.validation.images)?;
                nll(&ensemble_mean(&probs)?, &ds.validation.labels)
            })();
            match scored {
                Ok(v) => {
                    if best.is_none_or(|(b, _, _)| v < b) {
                        best = Some((v, lr, l2));
                    }
                    points.push(GridPoint { initial_lr: lr, l2_penalty: l2, validation_nll: Some(v), error: None });
                }
                Err(e) => points.push(GridPoint { initial_lr: lr, l2_penalty: l2, validation_nll: None, error: Some(e.to_string()) }),
            }
        }
    }
    GridResult {
        model: label.to_string(),
        points,
        selected: best.map(|(_, lr, l2)| (lr, l2)),
    }
}

/// Runs every (model, seed) cell, then aggregates. A failing cell is logged
/// and skipped; the others still run.
pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutcome> {
    cfg.validate()?;
    let hash = cfg.hash()?;
    let out = output_dir(cfg, opts)?;
    claim_output(&out, &hash)?;
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    write_json(
        &out.join(MANIFEST_FILE),
        &ExperimentManifest { config_hash: hash.clone(), config: cfg.hashed_view() },
    )?;
    let ds = generate_dataset(&cfg.dataset)?;
    write_json(&out.join("dataset.json"), &DatasetSummary::of(&ds, &hash))?;

    let mut resolved: Vec<(String, EnsembleConfig)> = cfg.models.iter().map(|m| (m.label(), cfg.resolve(m))).collect();
    if !cfg.grid.is_empty() {
        let mut results = Vec::new();
        for (label, model) in &mut resolved {
            let result = grid_search(cfg, &ds, model, label);
            if let Some((lr, l2)) = result.selected {
                model.train.initial_lr = lr;
                model.train.l2_penalty = l2;
            }
            results.push(result);
        }
        #[derive(Serialize)]
        struct GridFile<'a> {
            config_hash: &'a str,
            models: &'a [GridResult],
        }
        write_json(&out.join("grid.json"), &GridFile { config_hash: &hash, models: &results })?;
    }

    let jobs: Vec<(String, EnsembleConfig)> = resolved
        .iter()
        .flat_map(|(label, model)| {
            cfg.seeds.iter().map(move |&seed| {
                let mut c = model.clone();
                c.train.seed = seed;
                (label.clone(), c)
            })
        })
        .collect();
    let ctx = CellContext {
        dataset: &ds,
        config_hash: &hash,
        augment: cfg.augment,
        betas: &cfg.betas,
        histogram_bins: cfg.histogram_bins,
        nra_thresholds: cfg.nra_thresholds,
        eval_repeats: cfg.eval_repeats,
        exclusive_timing: opts.exclusive_timing,
    };
    let results: Mutex<Vec<Option<CellStatus>>> = Mutex::new(vec![None; jobs.len()]);
    let next = AtomicUsize::new(0);
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some((label, model)) = jobs.get(i) else { break };
        let seed = model.train.seed;
        let status = match run_cell(&ctx, label, model, &cell_dir(&out, label, seed)) {
            Ok(_) => CellStatus { model: label.clone(), seed, ok: true, error: None },
            Err(e) => CellStatus { model: label.clone(), seed, ok: false, error: Some(e.to_string()) },
        };
        results.lock().unwrap_or_else(|p| p.into_inner())[i] = Some(status);
    };
    std::thread::scope(|s| {
        for _ in 1..cfg.jobs.min(jobs.len()) {
            s.spawn(worker);
        }
        worker();
    });
    let cells = results
        .into_inner()
        .unwrap_or_else(|p| p.into_inner())
        .into_iter()
        .map(|s| s.expect("every cell reports a status"))
        .collect();
    let log = RunLog { config_hash: hash.clone(), cells };
    write_json(&out.join("run_log.json"), &log)?;
    let summary = if log.cells.iter().any(|c| c.ok) { Some(report(&out, Some(&hash))?) } else { None };
    Ok(RunOutcome { out, log, summary })
}
