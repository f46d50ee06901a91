//! Longitudinal cohort simulator driven by a known causal-temporal structure.

pub mod io;
pub mod random;
pub mod simulate;
pub mod structure;

pub use random::{random_structure, RandomStructureParams};
pub use simulate::{
    init_patient, init_patient_conditioned, patient_rng, prescribe, simulate_cohort,
    simulate_cohort_with_policy, simulate_patient, simulate_patient_with, step_patient, Cohort,
    GroundTruth, PatientDraws, PatientTrajectory, SimulationConfig, TreatmentPolicy,
};
pub use structure::{CausalStructure, StructureDocument};
