//! Training and evaluation of one (model, seed) cell.

use std::fs;
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::files::{write_json, write_with_hash};
use crate::ensembles::{train, EnsembleConfig, EnsemblePredictor, TrainingData};
use crate::error::{Error, Result};
use crate::evaluation::{combined_accuracy, diversity_report, median_seconds, nra_curve, CostMeasurement, DiversityReport, NraCurve};
use crate::nn::EpochReport;
use crate::synth::SplitDataset;
use crate::tensor::Tensor;
use crate::uncertainty::{accuracy, decompose, ensemble_mean, nll, UncertaintyTriple};

/// Serialises measured sections when exclusive timing is requested.
static TIMING_LOCK: Mutex<()> = Mutex::new(());

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintySummary {
    pub mean_tu: f64,
    pub mean_au: f64,
    pub mean_eu: f64,
}

impl UncertaintySummary {
    fn of(triples: &[UncertaintyTriple]) -> Self {
        let n = triples.len().max(1) as f64;
        Self {
            mean_tu: triples.iter().map(|t| t.tu).sum::<f64>() / n,
            mean_au: triples.iter().map(|t| t.au).sum::<f64>() / n,
            mean_eu: triples.iter().map(|t| t.eu).sum::<f64>() / n,
        }
    }
}

/// Counts over equal-width bins spanning `[0, log2 K]`; the last bin is closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub upper: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn of(values: impl IntoIterator<Item = f64>, bins: usize, upper: f64) -> Self {
        let mut counts = vec![0; bins];
        for v in values {
            let pos = (v.max(0.0) / upper * bins as f64).floor() as usize;
            counts[pos.min(bins - 1)] += 1;
        }
        Self { upper, counts }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyHistograms {
    pub tu: Histogram,
    pub au: Histogram,
    pub eu: Histogram,
}

impl UncertaintyHistograms {
    fn of(triples: &[UncertaintyTriple], bins: usize, upper: f64) -> Self {
        Self {
            tu: Histogram::of(triples.iter().map(|t| t.tu), bins, upper),
            au: Histogram::of(triples.iter().map(|t| t.au), bins, upper),
            eu: Histogram::of(triples.iter().map(|t| t.eu), bins, upper),
        }
    }
}

/// Extremes of the decomposition over every scored point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsCheck {
    pub points: usize,
    pub min_tu: f64,
    pub max_tu: f64,
    pub min_eu: f64,
    pub max_additivity_error: f64,
}

impl BoundsCheck {
    fn of<'a>(triples: impl IntoIterator<Item = &'a UncertaintyTriple>) -> Self {
        let mut b = Self {
            points: 0,
            min_tu: f64::INFINITY,
            max_tu: f64::NEG_INFINITY,
            min_eu: f64::INFINITY,
            max_additivity_error: 0.0,
        };
        for t in triples {
            b.points += 1;
            b.min_tu = b.min_tu.min(t.tu);
            b.max_tu = b.max_tu.max(t.tu);
            b.min_eu = b.min_eu.min(t.eu);
            b.max_additivity_error = b.max_additivity_error.max((t.tu - t.au - t.eu).abs());
        }
        b
    }
}

/// Everything deterministic about a cell. Timing lives in [`CellTiming`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub config_hash: String,
    pub model: String,
    pub seed: u64,
    pub ensemble: EnsembleConfig,
    pub parameter_count: usize,
    pub snapshot_epochs: Vec<usize>,
    pub id_accuracy: f64,
    pub id_nll: f64,
    pub validation_accuracy: f64,
    pub validation_nll: f64,
    /// Accuracy on ID + OOD with every OOD point counted wrong.
    pub combined_accuracy: f64,
    pub id_uncertainty: UncertaintySummary,
    pub ood_uncertainty: UncertaintySummary,
    pub id_histograms: UncertaintyHistograms,
    pub ood_histograms: UncertaintyHistograms,
    /// Diversity scored at β = 1.
    pub diversity: DiversityReport,
    pub diversity_by_beta: Vec<DiversityReport>,
    pub bounds: BoundsCheck,
    pub training: Vec<Vec<EpochReport>>,
}

impl CellReport {
    pub fn dq1(&self) -> f64 {
        self.diversity.dq_ensemble
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTiming {
    pub config_hash: String,
    pub model: String,
    pub seed: u64,
    pub measurement: CostMeasurement,
}

pub(crate) struct CellContext<'a> {
    pub dataset: &'a SplitDataset,
    pub config_hash: &'a str,
    pub augment: bool,
    pub betas: &'a [f64],
    pub histogram_bins: usize,
    pub nra_thresholds: usize,
    pub eval_repeats: usize,
    pub exclusive_timing: bool,
}

/// Member predictions on ID then OOD points along the batch axis.
fn concat_points(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, na, k) = a.dims3()?;
    let (_, nb, _) = b.dims3()?;
    let mut data = Vec::with_capacity(m * (na + nb) * k);
    for member in 0..m {
        data.extend_from_slice(&a.data()[member * na * k..(member + 1) * na * k]);
        data.extend_from_slice(&b.data()[member * nb * k..(member + 1) * nb * k]);
    }
    Tensor::new(vec![m, na + nb, k], data)
}

fn uncertainty_csv(id: &[UncertaintyTriple], ood: &[UncertaintyTriple], id_labels: &[usize], id_pred: &[usize], ood_pred: &[usize]) -> String {
    use std::fmt::Write as _;
    let mut out = String::from("split,index,label,predicted,tu,au,eu\n");
    for (i, t) in id.iter().enumerate() {
        writeln!(out, "id,{i},{},{},{},{},{}", id_labels[i], id_pred[i], t.tu, t.au, t.eu).expect("string write");
    }
    for (i, t) in ood.iter().enumerate() {
        writeln!(out, "ood,{i},,{},{},{},{}", ood_pred[i], t.tu, t.au, t.eu).expect("string write");
    }
    out
}

/// Trains `cfg`, scores it, and writes the cell's files into `dir`.
pub(crate) fn run_cell(ctx: &CellContext, label: &str, cfg: &EnsembleConfig, dir: &Path) -> Result<(CellReport, CellTiming)> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ds = ctx.dataset;
    let mut data = TrainingData::new(&ds.train.images, &ds.train.labels)?;
    if ctx.augment {
        data = data.with_flips(ds.spec.image_side);
    }
    let scratch = dir.join("scratch");

    let guard = ctx.exclusive_timing.then(|| TIMING_LOCK.lock().unwrap_or_else(|p| p.into_inner()));
    let started = Instant::now();
    let outcome = train(cfg, data, Some(&scratch))?;
    let train_seconds = started.elapsed().as_secs_f64();
    let predictor = &outcome.predictor;
    let (eval_seconds, (id_probs, ood_probs)) = median_seconds(ctx.eval_repeats, || {
        Ok((predictor.predict_members(&ds.id_test.images)?, predictor.predict_members(&ds.ood_test.images)?))
    })?;
    drop(guard);
    if scratch.exists() {
        fs::remove_dir_all(&scratch).map_err(|e| Error::io(&scratch, e))?;
    }

    let report = score(ctx, label, cfg, predictor, &outcome.snapshot_epochs, outcome.histories.clone(), &id_probs, &ood_probs)?;
    let timing = CellTiming {
        config_hash: ctx.config_hash.to_string(),
        model: label.to_string(),
        seed: cfg.train.seed,
        measurement: CostMeasurement {
            train_seconds,
            eval_seconds,
            parameter_count: predictor.param_count(),
        },
    };

    predictor.save(&dir.join("model"), ctx.config_hash)?;
    write_json(&dir.join("report.json"), &report)?;
    write_json(&dir.join("timing.json"), &timing)?;
    let combined = concat_points(&id_probs, &ood_probs)?;
    let labels = combined_labels(ds);
    let curve = nra_curve(&combined, &labels, ctx.nra_thresholds)?;
    write_with_hash(&dir.join("nra.csv"), ctx.config_hash, &curve.to_csv())?;
    let id_triples = decompose(&id_probs)?;
    let ood_triples = decompose(&ood_probs)?;
    let predicted = |p: &Tensor| -> Result<Vec<usize>> {
        let mean = ensemble_mean(p)?;
        Ok((0..mean.shape()[0]).map(|i| crate::uncertainty::argmax(mean.row(i))).collect())
    };
    let csv = uncertainty_csv(&id_triples, &ood_triples, &ds.id_test.labels, &predicted(&id_probs)?, &predicted(&ood_probs)?);
    write_with_hash(&dir.join("uncertainty.csv"), ctx.config_hash, &csv)?;
    Ok((report, timing))
}

fn combined_labels(ds: &SplitDataset) -> Vec<Option<usize>> {
    ds.id_test.labels.iter().map(|&y| Some(y)).chain(std::iter::repeat_n(None, ds.ood_test.len())).collect()
}

/// Recomputes the NRA curve of a saved cell from its predictor.
pub fn cell_nra_curve(predictor: &EnsemblePredictor, ds: &SplitDataset, thresholds: usize) -> Result<NraCurve> {
    let id = predictor.predict_members(&ds.id_test.images)?;
    let ood = predictor.predict_members(&ds.ood_test.images)?;
    nra_curve(&concat_points(&id, &ood)?, &combined_labels(ds), thresholds)
}

#[allow(clippy::too_many_arguments)]
fn score(
    ctx: &CellContext,
    label: &str,
    cfg: &EnsembleConfig,
    predictor: &EnsemblePredictor,
    snapshot_epochs: &[usize],
    training: Vec<Vec<EpochReport>>,
    id_probs: &Tensor,
    ood_probs: &Tensor,
) -> Result<CellReport> {
    let ds = ctx.dataset;
    let classes = cfg.model.classes;
    let upper = (classes as f64).log2();
    let id_mean = ensemble_mean(id_probs)?;
    let val_probs = predictor.predict_members(&ds.validation.images)?;
    let val_mean = ensemble_mean(&val_probs)?;
    let id_triples = decompose(id_probs)?;
    let ood_triples = decompose(ood_probs)?;
    let combined = concat_points(id_probs, ood_probs)?;
    let diversity = diversity_report(id_probs, ood_probs, 1.0)?;
    let diversity_by_beta = ctx.betas.iter().map(|&b| diversity.rescore(b)).collect::<Result<Vec<_>>>()?;
    Ok(CellReport {
        config_hash: ctx.config_hash.to_string(),
        model: label.to_string(),
        seed: cfg.train.seed,
        ensemble: cfg.clone(),
        parameter_count: predictor.param_count(),
        snapshot_epochs: snapshot_epochs.to_vec(),
        id_accuracy: accuracy(&id_mean, &ds.id_test.labels)?,
        id_nll: nll(&id_mean, &ds.id_test.labels)?,
        validation_accuracy: if ds.validation.is_empty() { 0.0 } else { accuracy(&val_mean, &ds.validation.labels)? },
        validation_nll: if ds.validation.is_empty() { 0.0 } else { nll(&val_mean, &ds.validation.labels)? },
        combined_accuracy: combined_accuracy(&combined, &combined_labels(ds))?,
        id_uncertainty: UncertaintySummary::of(&id_triples),
        ood_uncertainty: UncertaintySummary::of(&ood_triples),
        id_histograms: UncertaintyHistograms::of(&id_triples, ctx.histogram_bins, upper),
        ood_histograms: UncertaintyHistograms::of(&ood_triples, ctx.histogram_bins, upper),
        diversity,
        diversity_by_beta,
        bounds: BoundsCheck::of(id_triples.iter().chain(&ood_triples)),
        training,
    })
}
