use std::fs;
use std::path::Path;

use ensemble_uq::ensembles::Strategy;
use ensemble_uq::evaluation::DiversityReport;
use ensemble_uq::experiment::*;
use ensemble_uq::synth::DatasetSpec;

fn tiny_config(models: Vec<ModelEntry>, seeds: Vec<u64>) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        seeds,
        models,
        dataset: DatasetSpec { per_class_train: 30, per_class_id_test: 8, per_class_ood_test: 8, ..DatasetSpec::default() },
        ..ExperimentConfig::default()
    };
    cfg.defaults.hidden = vec![16];
    cfg.defaults.train.epochs = 4;
    cfg
}

fn roster() -> Vec<ModelEntry> {
    vec![
        ModelEntry::new(Strategy::Single, 1),
        ModelEntry::new(Strategy::Deep, 2),
        ModelEntry::new(Strategy::Snapshot, 2),
        ModelEntry::new(Strategy::Batch, 2),
        ModelEntry::new(Strategy::Mimo, 2),
    ]
}

fn run_into(cfg: &ExperimentConfig, out: &Path) -> RunOutcome {
    let outcome = run(cfg, &RunOptions { out: Some(out.to_owned()), exclusive_timing: true }).unwrap();
    assert!(outcome.log.failures().next().is_none(), "{:?}", outcome.log);
    outcome
}

/// Every file except the timing-derived ones, as (relative path, bytes).
fn metric_files(root: &Path) -> Vec<(String, Vec<u8>)> {
    const TIMING: [&str; 4] = ["timing.json", "cost.json", "cost.csv", "bubble.csv"];
    let mut files = Vec::new();
    let mut stack = vec![root.to_owned()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap().flatten() {
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else if !TIMING.contains(&path.file_name().unwrap().to_str().unwrap()) {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                files.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn single_network_only_has_zero_epistemic_histogram() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(vec![ModelEntry::new(Strategy::Single, 1)], vec![4]);
    run_into(&cfg, dir.path());
    let (_, reports) = load_reports(dir.path()).unwrap();
    assert_eq!(reports.len(), 1);
    let r = &reports[0];
    for h in [&r.id_histograms.eu, &r.ood_histograms.eu] {
        assert_eq!(h.counts[0], h.counts.iter().sum::<usize>());
    }
    assert_eq!(r.id_uncertainty.mean_eu, 0.0);
    assert_eq!(r.dq1(), 0.0);
}

#[test]
fn outputs_are_complete_hashed_and_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = tiny_config(roster(), vec![0, 1]);
    let hash = cfg.hash().unwrap();
    run_into(&cfg, a.path());
    let mut parallel = cfg.clone();
    parallel.jobs = 3;
    run_into(&parallel, b.path());

    // one NRA curve per model per seed plus one aggregate per model
    for m in &cfg.models {
        for seed in &cfg.seeds {
            assert!(cell_dir(a.path(), &m.label(), *seed).join("nra.csv").exists());
        }
        assert!(a.path().join("nra").join(format!("{}.csv", m.label())).exists());
    }
    let metrics_a = metric_files(a.path());
    assert_eq!(metrics_a, metric_files(b.path()), "metric files differ between runs");

    for (rel, bytes) in &metrics_a {
        let text = String::from_utf8_lossy(bytes);
        if rel.ends_with(".csv") || rel.ends_with(".json") {
            assert!(text.contains(&hash), "{rel} does not carry the config hash");
        }
    }
    let summary = fs::read_to_string(a.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2 + cfg.models.len());
}

#[test]
fn mixed_configurations_are_not_aggregated() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(vec![ModelEntry::new(Strategy::Single, 1)], vec![0]);
    run_into(&cfg, dir.path());
    let path = cell_dir(dir.path(), "single", 0).join("report.json");
    let tampered = fs::read_to_string(&path).unwrap().replace(&cfg.hash().unwrap(), "0000");
    fs::write(&path, tampered).unwrap();
    let err = report(dir.path(), None).unwrap_err();
    assert!(err.to_string().contains("mixed"), "{err}");

    let mut other = cfg.clone();
    other.seeds = vec![5];
    assert!(run(&other, &RunOptions { out: Some(dir.path().to_owned()), exclusive_timing: false }).is_err());
    assert!(report(dir.path(), Some("beef")).is_err());
}

#[test]
fn failing_cell_is_logged_and_the_rest_proceed() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(vec![ModelEntry::new(Strategy::Single, 1), ModelEntry::new(Strategy::Deep, 2)], vec![0]);
    // a learning rate this large overflows to non-finite values
    cfg.models[1].initial_lr = Some(1e300);
    let outcome = run(&cfg, &RunOptions { out: Some(dir.path().to_owned()), exclusive_timing: false }).unwrap();
    let failed: Vec<_> = outcome.log.failures().collect();
    assert_eq!(failed.len(), 1);
    assert_eq!(failed[0].model, "deep-m2");
    assert!(cell_dir(dir.path(), "single", 0).join("report.json").exists());
    assert!(outcome.summary.is_some());
}

#[test]
fn beta_sweep_reuses_stored_diversities() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(roster(), vec![0]);
    run_into(&cfg, dir.path());
    let (_, reports) = load_reports(dir.path()).unwrap();
    let csv = sweep_beta(&reports, &[1.0]).unwrap();
    for (line, r) in csv.lines().skip(1).zip(&reports) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[0], r.model);
        assert_eq!(cols[3].parse::<f64>().unwrap(), r.dq1());
    }
}

#[test]
fn small_beta_compresses_the_spread_between_models() {
    // OODD varies far more across models than IDD does
    let fixtures = [(0.02, 0.10), (0.04, 0.45), (0.03, 0.80)];
    let spread = |beta: f64| {
        let dq: Vec<f64> = fixtures
            .iter()
            .map(|&(idd, oodd)| DiversityReport::from_diversities(vec![idd; 4], vec![oodd; 4], 1.0).unwrap().rescore(beta).unwrap().dq_ensemble)
            .collect();
        dq.iter().cloned().fold(f64::MIN, f64::max) - dq.iter().cloned().fold(f64::MAX, f64::min)
    };
    assert!(spread(0.25) < spread(4.0));
}

#[test]
fn grid_search_picks_the_lowest_validation_nll() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(vec![ModelEntry::new(Strategy::Single, 1)], vec![0]);
    cfg.grid = GridSpec { initial_lr: vec![1e-6, 3e-3], l2_penalty: vec![] };
    run_into(&cfg, dir.path());
    let grid: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("grid.json")).unwrap()).unwrap();
    let model = &grid["models"][0];
    let points = model["points"].as_array().unwrap();
    let best = points
        .iter()
        .min_by(|a, b| a["validation_nll"].as_f64().unwrap().total_cmp(&b["validation_nll"].as_f64().unwrap()))
        .unwrap();
    assert_eq!(model["selected"][0], best["initial_lr"]);
    let (_, reports) = load_reports(dir.path()).unwrap();
    assert_eq!(serde_json::json!(reports[0].ensemble.train.initial_lr), best["initial_lr"]);
}

#[test]
fn dataset_generation_writes_a_readable_container() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(roster(), vec![0]);
    let summary = generate(&cfg, dir.path()).unwrap();
    let ds = ensemble_uq::synth::read_dataset(&dir.path().join("dataset.bin")).unwrap();
    assert_eq!(ds.train.len(), summary.train);
    assert_eq!(summary.train + summary.validation, 30 * 5);
}
