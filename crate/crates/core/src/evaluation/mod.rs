//! Diversity quality, classification with rejection, and cost accounting.

pub mod cost;
pub mod diversity;
pub mod nra;

pub use cost::{cost_report, median_seconds, CostMeasurement, CostReport, CostWeights, RelativeCost};
pub use diversity::{diversity_report, dq_beta, member_diversity, DiversityReport};
pub use nra::{combined_accuracy, nra_curve, NraCurve, DEFAULT_THRESHOLDS};
