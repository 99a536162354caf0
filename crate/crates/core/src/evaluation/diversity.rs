use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::uncertainty::{argmax, ensemble_mean};

/// For each member, the fraction of points where its predicted label differs
/// from the label of the member-averaged distribution.
pub fn member_diversity(member_probs: &Tensor) -> Result<Vec<f64>> {
    let (m, b, k) = member_probs.dims3()?;
    let mean = ensemble_mean(member_probs)?;
    if b == 0 {
        return Ok(vec![0.0; m]);
    }
    let base: Vec<usize> = (0..b).map(|i| argmax(mean.row(i))).collect();
    let data = member_probs.data();
    Ok((0..m)
        .map(|member| {
            let disagree = (0..b)
                .filter(|&i| argmax(&data[(member * b + i) * k..(member * b + i + 1) * k]) != base[i])
                .count();
            disagree as f64 / b as f64
        })
        .collect())
}

/// Weighted harmonic mean of `1 − idd` and `oodd`; `oodd` counts `beta`
/// times as much. Zero when the denominator vanishes.
pub fn dq_beta(idd: f64, oodd: f64, beta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&idd) || !(0.0..=1.0).contains(&oodd) {
        return Err(Error::Validation(format!(
            "diversities must lie in [0, 1], got idd={idd}, oodd={oodd}"
        )));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Validation(format!("beta must be positive, got {beta}")));
    }
    let agree = 1.0 - idd;
    let b2 = beta * beta;
    let denom = b2 * agree + oodd;
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((1.0 + b2) * agree * oodd / denom)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub beta: f64,
    pub per_member_idd: Vec<f64>,
    pub per_member_oodd: Vec<f64>,
    pub per_member_dq: Vec<f64>,
    pub idd_mean: f64,
    pub oodd_mean: f64,
    /// `DQ_β(idd_mean, oodd_mean)`: the ensemble-level score.
    pub dq_ensemble: f64,
    /// Mean of `per_member_dq`, reported separately from `dq_ensemble`.
    pub dq_member_mean: f64,
}

impl DiversityReport {
    pub fn from_diversities(idd: Vec<f64>, oodd: Vec<f64>, beta: f64) -> Result<Self> {
        if idd.len() != oodd.len() || idd.is_empty() {
            return Err(Error::Dimension(format!(
                "{} ID and {} OOD member diversities",
                idd.len(),
                oodd.len()
            )));
        }
        let m = idd.len() as f64;
        let per_member_dq = idd
            .iter()
            .zip(&oodd)
            .map(|(&i, &o)| dq_beta(i, o, beta))
            .collect::<Result<Vec<_>>>()?;
        let idd_mean = idd.iter().sum::<f64>() / m;
        let oodd_mean = oodd.iter().sum::<f64>() / m;
        Ok(Self {
            beta,
            dq_ensemble: dq_beta(idd_mean, oodd_mean, beta)?,
            dq_member_mean: per_member_dq.iter().sum::<f64>() / m,
            per_member_idd: idd,
            per_member_oodd: oodd,
            per_member_dq,
            idd_mean,
            oodd_mean,
        })
    }

    /// Same diversities scored under another `beta`.
    pub fn rescore(&self, beta: f64) -> Result<Self> {
        Self::from_diversities(self.per_member_idd.clone(), self.per_member_oodd.clone(), beta)
    }
}

pub fn diversity_report(id_probs: &Tensor, ood_probs: &Tensor, beta: f64) -> Result<DiversityReport> {
    let (m1, _, k1) = id_probs.dims3()?;
    let (m2, _, k2) = ood_probs.dims3()?;
    if m1 != m2 || k1 != k2 {
        return Err(Error::Dimension(format!(
            "ID predictions have M={m1}, K={k1}; OOD have M={m2}, K={k2}"
        )));
    }
    DiversityReport::from_diversities(member_diversity(id_probs)?, member_diversity(ood_probs)?, beta)
}
