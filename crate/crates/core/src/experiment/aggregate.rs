//! Cross-seed aggregation of finished cells.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::cell::{CellReport, CellTiming};
use super::files::{mean_std, parse_numeric_csv, read_hashed_csv, read_json, write_json, write_with_hash};
use super::{cells_dir, cell_dir, ExperimentManifest, MANIFEST_FILE};
use crate::error::{Error, Result};
use crate::evaluation::{cost_report, CostReport};

/// What `report` found and wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateSummary {
    pub config_hash: String,
    pub models: Vec<ModelSummary>,
    pub files: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: String,
    pub seeds: Vec<u64>,
    pub id_accuracy: (f64, f64),
    pub id_nll: (f64, f64),
    pub dq1: (f64, f64),
    pub id_eu: (f64, f64),
    pub ood_eu: (f64, f64),
    pub parameter_count: usize,
    /// Mean and std of the weighted cost, when a reference was available.
    pub weighted_cost: Option<(f64, f64)>,
}

/// Loads every cell report under `out` and checks they share one config hash.
pub fn load_reports(out: &Path) -> Result<(ExperimentManifest, Vec<CellReport>)> {
    let manifest: ExperimentManifest = read_json(&out.join(MANIFEST_FILE))?;
    let mut reports = Vec::new();
    for entry in &manifest.config.models {
        for &seed in &manifest.config.seeds {
            let path = cell_dir(out, &entry.label(), seed).join("report.json");
            if path.exists() {
                reports.push(read_json::<CellReport>(&path)?);
            }
        }
    }
    // anything else lying under cells/ also has to agree
    let mut stray = Vec::new();
    if let Ok(models) = std::fs::read_dir(cells_dir(out)) {
        for model in models.flatten() {
            for seed in std::fs::read_dir(model.path()).into_iter().flatten().flatten() {
                let path = seed.path().join("report.json");
                if path.exists() && !reports.iter().any(|r| cell_dir(out, &r.model, r.seed) == seed.path()) {
                    stray.push(read_json::<CellReport>(&path)?);
                }
            }
        }
    }
    let mismatched: Vec<String> = reports
        .iter()
        .chain(&stray)
        .filter(|r| r.config_hash != manifest.config_hash)
        .map(|r| format!("{}/seed {} ({})", r.model, r.seed, &r.config_hash[..12.min(r.config_hash.len())]))
        .collect();
    if !mismatched.is_empty() {
        return Err(Error::Validation(format!(
            "refusing to aggregate mixed configurations: experiment hash {} but found {}",
            manifest.config_hash,
            mismatched.join(", ")
        )));
    }
    Ok((manifest, reports))
}

/// DQ_β per model and β, recomputed from the stored per-member diversities.
pub fn sweep_beta(reports: &[CellReport], betas: &[f64]) -> Result<String> {
    let mut out = String::from("model,beta,seeds,dq_ensemble_mean,dq_ensemble_std,dq_member_mean_mean,dq_member_mean_std\n");
    for (model, group) in group_by_model(reports) {
        for &beta in betas {
            let mut ens = Vec::new();
            let mut mem = Vec::new();
            for r in &group {
                let d = r.diversity.rescore(beta)?;
                ens.push(d.dq_ensemble);
                mem.push(d.dq_member_mean);
            }
            let (em, es) = mean_std(&ens);
            let (mm, ms) = mean_std(&mem);
            writeln!(out, "{model},{beta},{},{em},{es},{mm},{ms}", group.len()).expect("string write");
        }
    }
    Ok(out)
}

/// Groups reports by model, keeping first-appearance order.
fn group_by_model(reports: &[CellReport]) -> Vec<(String, Vec<&CellReport>)> {
    let mut groups: Vec<(String, Vec<&CellReport>)> = Vec::new();
    for r in reports {
        match groups.iter_mut().find(|(m, _)| *m == r.model) {
            Some((_, g)) => g.push(r),
            None => groups.push((r.model.clone(), vec![r])),
        }
    }
    groups
}

fn stat<'a>(group: &[&'a CellReport], f: impl Fn(&'a CellReport) -> f64) -> (f64, f64) {
    mean_std(&group.iter().map(|r| f(r)).collect::<Vec<_>>())
}

/// Rewrites every aggregate file under `out` from the stored cells.
pub fn report(out: &Path, expected_hash: Option<&str>) -> Result<AggregateSummary> {
    let (manifest, reports) = load_reports(out)?;
    let hash = manifest.config_hash.as_str();
    if let Some(expected) = expected_hash {
        if expected != hash {
            return Err(Error::Validation(format!(
                "{} was produced by config {hash}, not the given config {expected}",
                out.display()
            )));
        }
    }
    if reports.is_empty() {
        return Err(Error::Validation(format!("no finished cells under {}", out.display())));
    }
    let cfg = &manifest.config;
    let mut files = Vec::new();
    let mut emit = |name: &str, body: &str| -> Result<()> {
        let path = out.join(name);
        write_with_hash(&path, hash, body)?;
        files.push(path);
        Ok(())
    };

    // costs against the reference model of the same seed
    let timings: BTreeMap<(String, u64), CellTiming> = reports
        .iter()
        .filter_map(|r| {
            let path = cell_dir(out, &r.model, r.seed).join("timing.json");
            read_json::<CellTiming>(&path).ok().map(|t| ((r.model.clone(), r.seed), t))
        })
        .collect();
    let reference = cfg.reference_model().expect("validated config has a single model");
    let mut costs: BTreeMap<(String, u64), CostReport> = BTreeMap::new();
    for ((model, seed), timing) in &timings {
        if let Some(reference_timing) = timings.get(&(reference.clone(), *seed)) {
            let cost = cost_report(timing.measurement, reference_timing.measurement, cfg.cost_weights)?;
            write_json(&cell_dir(out, model, *seed).join("cost.json"), &CostWithHash { config_hash: hash, cost: &cost })?;
            costs.insert((model.clone(), *seed), cost);
        }
    }

    let groups = group_by_model(&reports);
    let mut summary = String::from(
        "model,strategy,members,seeds,parameter_count,id_accuracy_mean,id_accuracy_std,id_nll_mean,id_nll_std,\
         validation_nll_mean,dq1_mean,dq1_std,dq1_member_mean,idd_mean,oodd_mean,\
         id_tu_mean,id_au_mean,id_eu_mean,ood_tu_mean,ood_au_mean,ood_eu_mean,ood_eu_std\n",
    );
    let mut cost_csv = String::from("model,seed,train_seconds,eval_seconds,parameter_count,rel_train,rel_eval,rel_params,weighted_cost\n");
    let mut bubble = String::from("model,id_accuracy_mean,dq1_mean,weighted_cost_mean,weighted_cost_std\n");
    let mut models = Vec::new();
    for (model, group) in &groups {
        let first = group[0];
        let acc = stat(group, |r| r.id_accuracy);
        let nll = stat(group, |r| r.id_nll);
        let dq = stat(group, |r| r.dq1());
        let id_eu = stat(group, |r| r.id_uncertainty.mean_eu);
        let ood_eu = stat(group, |r| r.ood_uncertainty.mean_eu);
        writeln!(
            summary,
            "{model},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            first.ensemble.strategy.name(),
            first.ensemble.members,
            group.len(),
            first.parameter_count,
            acc.0,
            acc.1,
            nll.0,
            nll.1,
            stat(group, |r| r.validation_nll).0,
            dq.0,
            dq.1,
            stat(group, |r| r.diversity.dq_member_mean).0,
            stat(group, |r| r.diversity.idd_mean).0,
            stat(group, |r| r.diversity.oodd_mean).0,
            stat(group, |r| r.id_uncertainty.mean_tu).0,
            stat(group, |r| r.id_uncertainty.mean_au).0,
            id_eu.0,
            stat(group, |r| r.ood_uncertainty.mean_tu).0,
            stat(group, |r| r.ood_uncertainty.mean_au).0,
            ood_eu.0,
            ood_eu.1,
        )
        .expect("string write");

        let mut weighted = Vec::new();
        for r in group {
            if let Some(c) = costs.get(&(model.clone(), r.seed)) {
                let m = c.measured;
                writeln!(
                    cost_csv,
                    "{model},{},{},{},{},{},{},{},{}",
                    r.seed, m.train_seconds, m.eval_seconds, m.parameter_count, c.relative.train, c.relative.eval, c.relative.params, c.weighted_cost
                )
                .expect("string write");
                weighted.push(c.weighted_cost);
            }
        }
        let weighted_cost = (!weighted.is_empty()).then(|| mean_std(&weighted));
        let (wm, ws) = weighted_cost.unwrap_or((f64::NAN, f64::NAN));
        writeln!(bubble, "{model},{},{},{wm},{ws}", acc.0, dq.0).expect("string write");

        emit(&format!("nra/{model}.csv"), &aggregate_nra(out, model, group)?)?;
        models.push(ModelSummary {
            model: model.clone(),
            seeds: group.iter().map(|r| r.seed).collect(),
            id_accuracy: acc,
            id_nll: nll,
            dq1: dq,
            id_eu,
            ood_eu,
            parameter_count: first.parameter_count,
            weighted_cost,
        });
    }
    emit("summary.csv", &summary)?;
    emit("dq_beta.csv", &sweep_beta(&reports, &cfg.betas)?)?;
    emit("cost.csv", &cost_csv)?;
    emit("bubble.csv", &bubble)?;
    Ok(AggregateSummary {
        config_hash: hash.to_string(),
        models,
        files,
    })
}

#[derive(Serialize)]
struct CostWithHash<'a> {
    config_hash: &'a str,
    #[serde(flatten)]
    cost: &'a CostReport,
}

/// Mean ± std across seeds of each cell's NRA curve, threshold by threshold.
fn aggregate_nra(out: &Path, model: &str, group: &[&CellReport]) -> Result<String> {
    let mut curves = Vec::new();
    for r in group {
        let path = cell_dir(out, model, r.seed).join("nra.csv");
        let (_, body) = read_hashed_csv(&path)?;
        curves.push((path.clone(), parse_numeric_csv(&path, &body)?));
    }
    let reference = &curves[0].1;
    for (path, curve) in &curves {
        let same_grid = curve.len() == reference.len() && curve.iter().zip(reference).all(|(a, b)| a[0] == b[0]);
        if !same_grid {
            return Err(Error::Corrupt {
                path: path.clone(),
                reason: "threshold grid differs between seeds".into(),
            });
        }
    }
    let mut csv = String::from("threshold,nra_mean,nra_std,rejected_fraction_mean,rejected_fraction_std,seeds\n");
    for (i, row) in reference.iter().enumerate() {
        let nra: Vec<f64> = curves.iter().map(|(_, c)| c[i][1]).collect();
        let rej: Vec<f64> = curves.iter().map(|(_, c)| c[i][2]).collect();
        let (nm, ns) = mean_std(&nra);
        let (rm, rs) = mean_std(&rej);
        writeln!(csv, "{},{nm},{ns},{rm},{rs},{}", row[0], curves.len()).expect("string write");
    }
    Ok(csv)
}
