//! Shared fixtures for unit tests.

use crate::synth::structure::{CausalStructure, StructureDocument};

/// Two diseases and one outcome: disease1 -> disease2 -> Y.
pub fn two_disease_doc() -> StructureDocument {
    serde_json::from_str(
        r#"{
          "n_windows": 10,
          "diseases": [
            {"id": "disease1", "progression": {"persistence": 1.0, "drift": 0.1},
             "lines": [{"effect_schedule": [-0.2, -0.1]}],
             "diagnostic_lab": "lab1", "threshold": 5.0},
            {"id": "disease2", "parents": [{"disease": "disease1", "weight": 0.05}],
             "progression": {"persistence": 1.0},
             "lines": [{"effect_schedule": [-0.2]}, {"effect_schedule": [-0.4]}],
             "diagnostic_lab": "lab2", "threshold": 5.0}
          ],
          "labs": [
            {"id": "lab1", "baseline": 1.0, "weights": [{"disease": "disease1", "weight": 1.0}]},
            {"id": "lab2", "baseline": 1.0, "weights": [{"disease": "disease2", "weight": 1.0}]}
          ],
          "outcomes": [
            {"id": "Y", "parents": [{"disease": "disease2", "weight": 1.0}], "threshold": 3.0, "slope": 2.0}
          ]
        }"#,
    )
    .unwrap()
}

pub fn two_disease_structure() -> CausalStructure {
    CausalStructure::from_document(&two_disease_doc()).unwrap()
}

/// `n` patients simulated through [`two_disease_structure`].
pub fn small_cohort(n: usize, seed: u64) -> crate::synth::Cohort {
    let config = crate::synth::SimulationConfig {
        n_patients: n,
        rng_seed: seed,
        ..Default::default()
    };
    crate::synth::simulate_cohort(&two_disease_structure(), &config).unwrap()
}
