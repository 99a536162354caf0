mod common;

use common::*;
use ensemble_uq::ensembles::*;
use ensemble_uq::ensembles::Strategy;
use ensemble_uq::nn::{lr_at, BatchSource, MultiHeadDense, Schedule, TrainConfig};
use ensemble_uq::uncertainty::{accuracy, ensemble_mean};
use ensemble_uq::Tensor;
use proptest::prelude::*;
use rand::Rng;

/// Two Gaussian blobs in 4-D, linearly separable with a wide margin.
fn blobs(n: usize, seed: u64) -> (Tensor, Vec<usize>) {
    let mut r = rng(seed);
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % 2;
        let centre = if y == 0 { -1.5 } else { 1.5 };
        rows.push((0..4).map(|_| centre + r.random_range(-0.8..0.8)).collect());
        labels.push(y);
    }
    (Tensor::from_rows(&rows).unwrap(), labels)
}

fn toy_config(strategy: Strategy, members: usize, epochs: usize) -> EnsembleConfig {
    let mut train = TrainConfig { epochs, batch_size: 32, initial_lr: 5e-3, seed: 11, ..TrainConfig::default() };
    if strategy == Strategy::Snapshot {
        train.schedule = Schedule::CosineCyclic { num_cycles: members };
    }
    EnsembleConfig::new(strategy, members, ModelSpec { input_dim: 4, hidden: vec![8], classes: 2 }, train)
}

fn member_accuracies(p: &EnsemblePredictor, x: &Tensor, y: &[usize]) -> Vec<f64> {
    let probs = p.predict_members(x).unwrap();
    (0..p.members).map(|m| accuracy(&probs.slab(m).unwrap(), y).unwrap()).collect()
}

#[test]
fn deep_members_are_distinct_accurate_and_m_times_larger() {
    let (x, y) = blobs(200, 1);
    let data = TrainingData::new(&x, &y).unwrap();
    let deep = train(&toy_config(Strategy::Deep, 2, 30), data, None).unwrap();
    let single = train(&toy_config(Strategy::Single, 1, 30), data, None).unwrap();
    let nets = deep.predictor.networks();
    assert_ne!(nets[0].flat_params(), nets[1].flat_params());
    for acc in member_accuracies(&deep.predictor, &x, &y) {
        assert!(acc >= 0.9, "member accuracy {acc}");
    }
    assert_eq!(deep.predictor.param_count(), 2 * single.predictor.param_count());
    assert_eq!(deep.histories.len(), 2);
}

#[test]
fn member_seeds_follow_the_golden_stride() {
    assert_eq!(member_seed(5, 0), 5);
    assert_eq!(member_seed(5, 2), 5 + 2 * 0x9E37_79B9);
    assert_eq!(member_seed(u64::MAX, 1), 0x9E37_79B8);
}

#[test]
fn snapshot_epochs_and_restarts() {
    let (x, y) = blobs(64, 2);
    let cfg = toy_config(Strategy::Snapshot, 4, 40);
    let out = train(&cfg, TrainingData::new(&x, &y).unwrap(), None).unwrap();
    assert_eq!(out.snapshot_epochs, vec![10, 20, 30, 40]);
    assert_eq!(out.predictor.members, 4);
    let history = &out.histories[0];
    for &e in &out.snapshot_epochs[..3] {
        // the epoch after a snapshot runs at the initial rate again
        assert_eq!(history[e].lr, cfg.train.initial_lr);
    }
    let snaps = out.predictor.networks();
    assert_ne!(snaps[0].flat_params(), snaps[3].flat_params());
}

#[test]
fn snapshot_spill_matches_in_memory() {
    let (x, y) = blobs(64, 3);
    let cfg = toy_config(Strategy::Snapshot, 3, 9);
    let data = TrainingData::new(&x, &y).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let spilled = train_snapshot(&cfg, data, Some(dir.path())).unwrap();
    let kept = train_snapshot(&cfg, data, None).unwrap();
    for (a, b) in spilled.predictor.networks().iter().zip(kept.predictor.networks()) {
        assert_eq!(a.flat_params(), b.flat_params());
    }
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0, "spill files are cleaned up");
}

#[test]
fn batch_ensemble_trains_and_stays_small() {
    let (x, y) = blobs(200, 4);
    let data = TrainingData::new(&x, &y).unwrap();
    let batch = train(&toy_config(Strategy::Batch, 4, 30), data, None).unwrap();
    for acc in member_accuracies(&batch.predictor, &x, &y) {
        assert!(acc >= 0.9, "member accuracy {acc}");
    }
    // layers 4→8 and 8→2: shared weights plus per-member r, s and bias
    let expected = (4 * 8 + 4 * (4 + 8) + 4 * 8) + (8 * 2 + 4 * (8 + 2) + 4 * 2);
    assert_eq!(batch.predictor.param_count(), expected);
}

#[test]
fn full_repetition_gives_every_head_the_same_example() {
    let (x, y) = blobs(50, 5);
    let data = TrainingData::new(&x, &y).unwrap();
    let mut src = MimoSource::new(data, 3, 1.0, 2);
    let mut r = rng(0);
    src.begin_epoch(&mut r).unwrap();
    let (inputs, _) = src.batch(&mut r, 0..20).unwrap();
    assert_eq!(inputs.shape(), &[40, 12]);
    let heads = src.last_indices();
    assert!(heads[1] == heads[0] && heads[2] == heads[0]);
    for row in 0..40 {
        let r = inputs.row(row);
        assert_eq!(&r[0..4], &r[4..8]);
        assert_eq!(&r[0..4], &r[8..12]);
    }
}

fn match_rate(rho: f64, n: usize, epochs: usize) -> f64 {
    let (x, y) = blobs(n, 6);
    let data = TrainingData::new(&x, &y).unwrap();
    let mut src = MimoSource::new(data, 2, rho, 1);
    let mut r = rng(1);
    let (mut matches, mut slots) = (0, 0);
    for _ in 0..epochs {
        src.begin_epoch(&mut r).unwrap();
        let mut start = 0;
        while start < n {
            let end = (start + 32).min(n);
            src.batch(&mut r, start..end).unwrap();
            let h = src.last_indices();
            matches += h[0].iter().zip(&h[1]).filter(|(a, b)| a == b).count();
            slots += h[0].len();
            start = end;
        }
    }
    matches as f64 / slots as f64
}

#[test]
fn independent_heads_match_at_chance_rate() {
    let n = 200;
    let rate = match_rate(0.0, n, 50);
    let chance = 1.0 / n as f64;
    assert!((0.4 * chance..2.0 * chance).contains(&rate), "match rate {rate}, chance {chance}");
    let half = match_rate(0.5, n, 20);
    assert!((half - 0.5).abs() < 0.03, "rho 0.5 gave {half}");
}

#[test]
fn mimo_heads_permute_with_their_outputs() {
    let (x, y) = blobs(100, 7);
    let out = train(&toy_config(Strategy::Mimo, 3, 5), TrainingData::new(&x, &y).unwrap(), None).unwrap();
    let original = out.predictor.predict_members(&x).unwrap();
    let mut permuted = out.predictor.clone();
    let Body::Mimo(net) = &mut permuted.body else { panic!("expected a MIMO body") };
    let layer = net.heads_layer_mut().unwrap();
    let mut heads = layer.heads().to_vec();
    heads.rotate_left(1);
    *layer = MultiHeadDense::from_heads(heads).unwrap();
    let shuffled = permuted.predict_members(&x).unwrap();
    for m in 0..3 {
        assert_eq!(shuffled.slab(m).unwrap(), original.slab((m + 1) % 3).unwrap());
    }
}

#[test]
fn predictions_have_member_shape_and_are_distributions() {
    let (x, y) = blobs(40, 8);
    let data = TrainingData::new(&x, &y).unwrap();
    for (s, m) in [(Strategy::Single, 1), (Strategy::Deep, 4), (Strategy::Snapshot, 2), (Strategy::Batch, 3), (Strategy::Mimo, 2)] {
        let p = train(&toy_config(s, m, 4), data, None).unwrap().predictor;
        let probs = p.predict_members(&x).unwrap();
        assert_eq!(probs.shape(), &[m, 40, 2]);
        for row in probs.data().chunks(2) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
        assert!(p.predict_members(&Tensor::zeros(&[2, 5])).is_err());
    }
}

#[test]
fn saved_predictors_reload_bit_exactly() {
    let (x, y) = blobs(40, 9);
    let data = TrainingData::new(&x, &y).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for (s, m) in [(Strategy::Deep, 3), (Strategy::Batch, 2), (Strategy::Mimo, 2), (Strategy::Snapshot, 2)] {
        let p = train(&toy_config(s, m, 4), data, None).unwrap().predictor;
        let path = dir.path().join(s.name());
        p.save(&path, "cafe").unwrap();
        let (back, hash) = EnsemblePredictor::load(&path).unwrap();
        assert_eq!(hash, "cafe");
        assert_eq!(back.strategy, s);
        for (a, b) in p.networks().iter().zip(back.networks()) {
            let bits = |v: Vec<f64>| v.into_iter().map(f64::to_bits).collect::<Vec<_>>();
            assert_eq!(bits(a.flat_params()), bits(b.flat_params()));
        }
        assert_eq!(p.predict_members(&x).unwrap(), back.predict_members(&x).unwrap());
    }
}

#[test]
fn toy_problem_is_fit_and_training_is_deterministic() {
    let (x, y) = blobs(120, 10);
    let data = TrainingData::new(&x, &y).unwrap();
    let cfg = toy_config(Strategy::Single, 1, 200);
    let a = train(&cfg, data, None).unwrap();
    let b = train(&cfg, data, None).unwrap();
    let final_loss = a.histories[0].last().unwrap().mean_loss;
    let first_below = a.histories[0].iter().position(|h| h.mean_loss < 0.1);
    assert!(first_below.is_some(), "final loss {final_loss}");
    assert_eq!(a.predictor.networks()[0].flat_params(), b.predictor.networks()[0].flat_params());
    assert_eq!(a.histories, b.histories);
    let mean = ensemble_mean(&a.predictor.predict_members(&x).unwrap()).unwrap();
    assert!(accuracy(&mean, &y).unwrap() >= 0.95);
}

#[test]
fn mismatched_data_is_rejected() {
    let (x, y) = blobs(20, 11);
    let data = TrainingData::new(&x, &y).unwrap();
    let mut cfg = toy_config(Strategy::Deep, 2, 2);
    cfg.model.input_dim = 5;
    assert!(train(&cfg, data, None).is_err());
    let bad_labels = vec![3; 20];
    let cfg = toy_config(Strategy::Deep, 2, 2);
    assert!(train(&cfg, TrainingData::new(&x, &bad_labels).unwrap(), None).is_err());
    assert!(TrainingData::new(&x, &y[..5]).is_err());
    assert!(train_snapshot(&toy_config(Strategy::Deep, 2, 2), data, None).is_err());
}

proptest! {
    #[test]
    fn cyclic_rate_restarts_and_strictly_decreases_within_cycles(cycles in 1usize..7, extra in 0usize..30) {
        let total = cycles * (1 + extra / cycles.max(1)) + extra % 3;
        let schedule = Schedule::CosineCyclic { num_cycles: cycles };
        prop_assume!(schedule.validate(total).is_ok());
        let lr: Vec<f64> = (0..total).map(|e| lr_at(&schedule, e, total, 0.01).unwrap()).collect();
        let ends = schedule.cycle_ends(total);
        prop_assert_eq!(ends.len(), cycles);
        let mut start = 0;
        for &end in &ends {
            prop_assert_eq!(lr[start], 0.01);
            for e in start..end {
                prop_assert!(lr[e + 1] < lr[e]);
            }
            start = end + 1;
        }
    }
}
