use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::uncertainty::{argmax, decompose, ensemble_mean};

/// Default size of the evenly spaced threshold grid on `[0, log2 K]`.
pub const DEFAULT_THRESHOLDS: usize = 201;

/// Non-rejected accuracy as a function of the total-uncertainty threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NraCurve {
    pub thresholds: Vec<f64>,
    pub nra: Vec<f64>,
    pub rejected_fraction: Vec<f64>,
}

impl NraCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,nra,rejected_fraction\n");
        for ((t, a), r) in self.thresholds.iter().zip(&self.nra).zip(&self.rejected_fraction) {
            writeln!(out, "{t},{a},{r}").expect("write to string");
        }
        out
    }
}

/// `labels[i]` is `Some(class)` for an ID point and `None` for an OOD point;
/// OOD points are always counted as misclassified.
fn correctness(member_probs: &Tensor, labels: &[Option<usize>]) -> Result<(Vec<bool>, usize)> {
    let (_, b, k) = member_probs.dims3()?;
    if labels.len() != b {
        return Err(Error::Dimension(format!("{} labels for {b} points", labels.len())));
    }
    let mean = ensemble_mean(member_probs)?;
    let correct = labels
        .iter()
        .enumerate()
        .map(|(i, label)| match label {
            Some(y) if *y >= k => Err(Error::Index(format!("label {y} with {k} classes"))),
            Some(y) => Ok(argmax(mean.row(i)) == *y),
            None => Ok(false),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((correct, k))
}

/// Accuracy of the ensemble mean on a combined ID + OOD set.
pub fn combined_accuracy(member_probs: &Tensor, labels: &[Option<usize>]) -> Result<f64> {
    let (correct, _) = correctness(member_probs, labels)?;
    if correct.is_empty() {
        return Ok(0.0);
    }
    Ok(correct.iter().filter(|c| **c).count() as f64 / correct.len() as f64)
}

/// Keeps points with `TU ≤ τ` for each `τ` on an inclusive grid over
/// `[0, log2 K]`. An empty kept set records NRA 1 with everything rejected.
pub fn nra_curve(member_probs: &Tensor, labels: &[Option<usize>], n_thresholds: usize) -> Result<NraCurve> {
    if n_thresholds < 2 {
        return Err(Error::Validation("an NRA curve needs at least two thresholds".into()));
    }
    let (correct, k) = correctness(member_probs, labels)?;
    let tu: Vec<f64> = decompose(member_probs)?.iter().map(|u| u.tu).collect();
    let top = (k as f64).log2();
    let thresholds: Vec<f64> = (0..n_thresholds)
        .map(|i| {
            if i + 1 == n_thresholds {
                top
            } else {
                top * i as f64 / (n_thresholds - 1) as f64
            }
        })
        .collect();

    // sort once, then sweep the thresholds
    let mut order: Vec<usize> = (0..tu.len()).collect();
    order.sort_by(|&a, &b| tu[a].total_cmp(&tu[b]));
    let n = tu.len();
    let (mut kept, mut kept_correct) = (0usize, 0usize);
    let mut nra = Vec::with_capacity(n_thresholds);
    let mut rejected_fraction = Vec::with_capacity(n_thresholds);
    for &tau in &thresholds {
        while kept < n && tu[order[kept]] <= tau {
            if correct[order[kept]] {
                kept_correct += 1;
            }
            kept += 1;
        }
        if kept == 0 {
            nra.push(1.0);
            rejected_fraction.push(1.0);
        } else {
            nra.push(kept_correct as f64 / kept as f64);
            rejected_fraction.push((n - kept) as f64 / n as f64);
        }
    }
    Ok(NraCurve {
        thresholds,
        nra,
        rejected_fraction,
    })
}
