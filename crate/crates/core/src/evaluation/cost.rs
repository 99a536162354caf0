use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weights of the relative training time, evaluation time and parameter
/// count in the aggregate cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostWeights {
    pub train: f64,
    pub eval: f64,
    pub params: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            train: 0.7,
            eval: 0.2,
            params: 0.1,
        }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.eval, self.params];
        if parts.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Validation(format!("cost weights must be nonnegative: {self:?}")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!("cost weights sum to {sum}, not 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostMeasurement {
    pub train_seconds: f64,
    pub eval_seconds: f64,
    pub parameter_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeCost {
    pub train: f64,
    pub eval: f64,
    pub params: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub measured: CostMeasurement,
    pub reference: CostMeasurement,
    pub relative: RelativeCost,
    pub weights: CostWeights,
    pub weighted_cost: f64,
}

/// Costs relative to a reference (normally the single network) and their
/// weighted sum.
pub fn cost_report(
    measured: CostMeasurement,
    reference: CostMeasurement,
    weights: CostWeights,
) -> Result<CostReport> {
    weights.validate()?;
    if !(reference.train_seconds > 0.0 && reference.eval_seconds > 0.0 && reference.parameter_count > 0) {
        return Err(Error::Validation(format!("reference costs must be positive: {reference:?}")));
    }
    let relative = RelativeCost {
        train: measured.train_seconds / reference.train_seconds,
        eval: measured.eval_seconds / reference.eval_seconds,
        params: measured.parameter_count as f64 / reference.parameter_count as f64,
    };
    Ok(CostReport {
        measured,
        reference,
        weighted_cost: weighted(relative, weights),
        relative,
        weights,
    })
}

fn weighted(rel: RelativeCost, w: CostWeights) -> f64 {
    w.train * rel.train + w.eval * rel.eval + w.params * rel.params
}

/// Median wall-clock seconds over `reps` runs of `f` (at least three).
pub fn median_seconds<T>(reps: usize, mut f: impl FnMut() -> Result<T>) -> Result<(f64, T)> {
    let reps = reps.max(3);
    let mut times = Vec::with_capacity(reps);
    let mut last = None;
    for _ in 0..reps {
        let start = Instant::now();
        last = Some(f()?);
        times.push(start.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    Ok((times[reps / 2], last.expect("reps >= 3")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(t: f64, e: f64, p: usize) -> CostMeasurement {
        CostMeasurement {
            train_seconds: t,
            eval_seconds: e,
            parameter_count: p,
        }
    }

    #[test]
    fn identical_costs_weigh_one() {
        let r = cost_report(m(2.0, 0.5, 100), m(2.0, 0.5, 100), CostWeights::default()).unwrap();
        assert!((r.weighted_cost - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eightfold_everything() {
        let r = cost_report(m(16.0, 4.0, 800), m(2.0, 0.5, 100), CostWeights::default()).unwrap();
        assert!((r.weighted_cost - 8.0).abs() < 1e-12);
    }

    #[test]
    fn batch_ensemble_like_factors() {
        let r = cost_report(m(1.85, 1.5, 110), m(1.0, 1.0, 100), CostWeights::default()).unwrap();
        assert!((r.weighted_cost - 1.705).abs() < 1e-12);
    }

    #[test]
    fn weights_must_sum_to_one() {
        let bad = CostWeights { train: 0.7, eval: 0.2, params: 0.2 };
        assert!(cost_report(m(1.0, 1.0, 1), m(1.0, 1.0, 1), bad).is_err());
        let custom = CostWeights { train: 0.2, eval: 0.7, params: 0.1 };
        assert!(cost_report(m(1.0, 1.0, 1), m(1.0, 1.0, 1), custom).is_ok());
    }

    #[test]
    fn reference_must_be_positive() {
        assert!(cost_report(m(1.0, 1.0, 1), m(0.0, 1.0, 1), CostWeights::default()).is_err());
    }

    #[test]
    fn median_uses_at_least_three_runs() {
        let mut calls = 0;
        let (secs, _) = median_seconds(1, || {
            calls += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(calls, 3);
        assert!(secs >= 0.0);
    }
}
