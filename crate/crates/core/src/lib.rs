//! Cohort simulation, sequential individualized treatment-effect estimation
//! by propensity-score matching, and sequence models that consume those
//! effects through feature augmentation or unsupervised pretraining.

pub mod error;
pub mod harness;
pub mod ite;
pub mod linalg;
pub mod models;
pub mod stats;
pub mod synth;
pub mod treatment;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use treatment::TreatmentVector;
