//! Helpers shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use ensemble_uq::nn::loss::loss_and_grad;
use ensemble_uq::nn::{BatchEnsembleDense, Dense, LayerSpec, Network, Targets};
use ensemble_uq::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;
/// Below this magnitude gradients are compared in absolute terms.
pub const FD_FLOOR: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

pub fn random_labels(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..classes)).collect()
}

/// Replaces every parameter (weights, biases, fast weights) with uniform noise.
pub fn randomize(net: &mut Network, rng: &mut ChaCha8Rng, scale: f64) {
    let values: Vec<f64> = (0..net.param_count()).map(|_| rng.random_range(-scale..scale)).collect();
    net.load_flat_params(&values).unwrap();
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

fn loss_at(net: &Network, x: &Tensor, targets: &Targets) -> f64 {
    loss_and_grad(&net.infer(x).unwrap(), targets).unwrap().0
}

/// Worst relative error between backprop and central differences, over
/// every parameter and every input coordinate.
pub fn gradient_error(net: &mut Network, x: &Tensor, targets: &Targets) -> f64 {
    net.zero_grad();
    let logits = net.forward(x).unwrap();
    let (_, grad) = loss_and_grad(&logits, targets).unwrap();
    let dx = net.backward(&grad).unwrap();
    let analytic = net.flat_grads();
    let base = net.flat_params();

    let mut worst: f64 = 0.0;
    let mut probe = base.clone();
    for i in 0..base.len() {
        probe[i] = base[i] + FD_STEP;
        net.load_flat_params(&probe).unwrap();
        let up = loss_at(net, x, targets);
        probe[i] = base[i] - FD_STEP;
        net.load_flat_params(&probe).unwrap();
        let down = loss_at(net, x, targets);
        probe[i] = base[i];
        worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * FD_STEP)));
    }
    net.load_flat_params(&base).unwrap();

    let mut xp = x.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        xp.data_mut()[i] = orig + FD_STEP;
        let up = loss_at(net, &xp, targets);
        xp.data_mut()[i] = orig - FD_STEP;
        let down = loss_at(net, &xp, targets);
        xp.data_mut()[i] = orig;
        worst = worst.max(rel_err(dx.data()[i], (up - down) / (2.0 * FD_STEP)));
    }
    worst
}

/// Smallest |pre-activation| feeding any ReLU; finite differences are only
/// meaningful when this is well clear of the kink.
pub fn relu_margin(net: &Network, x: &Tensor) -> f64 {
    let specs = net.specs();
    let mut margin = f64::INFINITY;
    for (cut, spec) in specs.iter().enumerate().skip(1) {
        if *spec != LayerSpec::Relu {
            continue;
        }
        let mut prefix = net.clone();
        prefix.truncate(cut);
        let z = prefix.infer(x).unwrap();
        margin = margin.min(z.data().iter().fold(f64::INFINITY, |m, v| m.min(v.abs())));
    }
    margin
}

/// Explicit dense layers for member `i` of a stack of batch-ensemble layers.
pub fn explicit_member(layers: &[&BatchEnsembleDense], i: usize) -> Network {
    let dense = layers
        .iter()
        .map(|l| Dense::from_parts(l.member_weight(i), l.member_bias(i)).unwrap())
        .collect();
    Network::from_dense(dense, true)
}

/// Rows `[block·b, (block+1)·b)` of a 2-D tensor.
pub fn row_block(t: &Tensor, block: usize, b: usize) -> Tensor {
    let idx: Vec<usize> = (block * b..(block + 1) * b).collect();
    t.select_rows(&idx).unwrap()
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
