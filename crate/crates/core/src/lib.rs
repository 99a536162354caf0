//! Neural-network ensembles with uncertainty decomposition.
//!
//! The crate trains four ensemble strategies over a small dense network stack
//! and evaluates them on in-distribution (ID) and out-of-distribution (OOD)
//! data:
//!
//! - [`nn`]: tensors, layers with exact backward passes, Adam, LR schedules
//! - [`ensembles`]: deep, snapshot, batch (rank-1 fast weights) and MIMO ensembles
//! - [`uncertainty`]: ensemble averaging, total/aleatoric/epistemic entropy, NLL
//! - [`evaluation`]: member diversity, diversity quality `DQ_β`, non-rejected
//!   accuracy curves, weighted cost accounting
//! - [`synth`]: seeded procedural shape images with disjoint ID/OOD classes
//! - [`experiment`]: the seeded experiment runner behind the CLI

pub mod ensembles;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod nn;
pub mod synth;
pub mod tensor;
pub mod uncertainty;

pub use error::{Error, Result};
pub use tensor::Tensor;
