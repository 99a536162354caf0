//! Ensemble averaging and the entropy decomposition of predictive uncertainty.
//!
//! Member predictions are `[M × B × K]` tensors of softmax rows. Entropies are
//! in bits, so the maximum total uncertainty is `log2 K`. NLL stays in nats.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Tolerance on a row sum when checking that a row is a distribution.
pub const STOCHASTIC_TOL: f64 = 1e-6;

/// Probabilities are floored here before taking logs in [`nll`].
pub const PROB_FLOOR: f64 = 1e-12;

/// Total, aleatoric and epistemic uncertainty of one prediction, in bits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyTriple {
    pub tu: f64,
    pub au: f64,
    pub eu: f64,
}

/// Entropy in bits with `0·log 0 = 0`.
pub fn entropy_bits(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&q| q > 0.0)
        .map(|&q| q * q.log2())
        .sum::<f64>()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn check_rows(probs: &[f64], k: usize) -> Result<()> {
    for (i, row) in probs.chunks(k).enumerate() {
        let sum: f64 = row.iter().sum();
        if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) || (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::Validation(format!(
                "row {i} is not a probability vector (sum {sum})"
            )));
        }
    }
    Ok(())
}

/// Arithmetic mean over the member axis: `[M × B × K] -> [B × K]`.
pub fn ensemble_mean(member_probs: &Tensor) -> Result<Tensor> {
    let (m, b, k) = member_probs.dims3()?;
    if m == 0 {
        return Err(Error::Dimension("ensemble with zero members".into()));
    }
    let data = member_probs.data();
    let width = b * k;
    let mut out = vec![0.0; width];
    for member in 0..m {
        out.iter_mut()
            .zip(&data[member * width..(member + 1) * width])
            .for_each(|(o, p)| *o += p);
    }
    let scale = m as f64;
    out.iter_mut().for_each(|o| *o /= scale);
    Tensor::new(vec![b, k], out)
}

/// `TU = H[mean]`, `AU = mean of member entropies`, `EU = TU − AU` clamped at 0.
///
/// TU and AU are capped at `log2 K` to absorb rounding above the bound.
pub fn decompose(member_probs: &Tensor) -> Result<Vec<UncertaintyTriple>> {
    let (m, b, k) = member_probs.dims3()?;
    check_rows(member_probs.data(), k.max(1))?;
    let mean = ensemble_mean(member_probs)?;
    let cap = (k as f64).log2();
    let data = member_probs.data();
    Ok((0..b)
        .map(|i| {
            let tu = entropy_bits(mean.row(i)).min(cap);
            let au = ((0..m)
                .map(|member| entropy_bits(&data[(member * b + i) * k..(member * b + i + 1) * k]))
                .sum::<f64>()
                / m as f64)
                .min(cap);
            UncertaintyTriple {
                tu,
                au,
                eu: (tu - au).max(0.0),
            }
        })
        .collect())
}

fn check_labels(probs: &Tensor, labels: &[usize]) -> Result<(usize, usize)> {
    let (b, k) = probs.dims2()?;
    if labels.len() != b {
        return Err(Error::Dimension(format!("{} labels for {b} rows", labels.len())));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Index(format!("label {bad} with {k} classes")));
    }
    Ok((b, k))
}

/// Mean negative natural-log likelihood of the labels.
pub fn nll(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    let (b, _) = check_labels(probs, labels)?;
    if b == 0 {
        return Ok(0.0);
    }
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -probs.row(i)[y].max(PROB_FLOOR).ln())
        .sum();
    Ok(total / b as f64)
}

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
pub fn accuracy(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    let (b, _) = check_labels(probs, labels)?;
    if b == 0 {
        return Ok(0.0);
    }
    let correct = labels
        .iter()
        .enumerate()
        .filter(|(i, &y)| argmax(probs.row(*i)) == y)
        .count();
    Ok(correct as f64 / b as f64)
}
