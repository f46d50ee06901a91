#![allow(dead_code)]

use deltaguide::synth::{simulate_cohort, CausalStructure, Cohort, SimulationConfig};

/// Two diseases, three labs, one outcome; no severity or lab noise.
pub fn noiseless_structure() -> CausalStructure {
    CausalStructure::from_json_str(
        r#"{
          "n_windows": 16,
          "diseases": [
            {"id": "d1", "progression": {"persistence": 1.0, "drift": 0.4},
             "lines": [{"effect_schedule": [-0.3, -0.2, -0.1]}],
             "diagnostic_lab": "a", "threshold": 3.0},
            {"id": "d2", "parents": [{"disease": "d1", "weight": 0.1}],
             "progression": {"persistence": 1.0, "drift": 0.2},
             "lines": [{"effect_schedule": [-0.25]}],
             "diagnostic_lab": "c", "threshold": 4.0}
          ],
          "labs": [
            {"id": "a", "baseline": 1.0, "weights": [{"disease": "d1", "weight": 1.0}]},
            {"id": "b", "baseline": 2.0, "weights": [{"disease": "d1", "weight": 0.5}, {"disease": "d2", "weight": 1.0}]},
            {"id": "c", "baseline": 0.5, "weights": [{"disease": "d2", "weight": -0.7}]}
          ],
          "outcomes": [
            {"id": "y", "parents": [{"disease": "d2", "weight": 1.0}], "threshold": 2.0, "slope": 2.0}
          ]
        }"#,
    )
    .unwrap()
}

/// Small noisy structure with treatment ladders for harness tests.
pub fn small_structure() -> CausalStructure {
    CausalStructure::from_json_str(
        r#"{
          "n_windows": 20,
          "diseases": [
            {"id": "d1", "progression": {"persistence": 1.0, "drift": 0.15, "noise_std": 0.05},
             "lines": [{"effect_schedule": [-0.2, -0.1]}, {"effect_schedule": [-0.3]}],
             "diagnostic_lab": "a", "threshold": 12.0},
            {"id": "d2", "parents": [{"disease": "d1", "weight": 0.05}],
             "progression": {"persistence": 1.0, "drift": 0.05, "noise_std": 0.05},
             "lines": [{"effect_schedule": [-0.2]}],
             "diagnostic_lab": "b", "threshold": 6.0}
          ],
          "labs": [
            {"id": "a", "baseline": 1.0, "weights": [{"disease": "d1", "weight": 1.0}], "noise_std": 0.2},
            {"id": "b", "baseline": 1.0, "weights": [{"disease": "d2", "weight": 1.0}], "noise_std": 0.2},
            {"id": "c", "baseline": 0.0, "weights": [{"disease": "d1", "weight": 0.3}, {"disease": "d2", "weight": 0.3}], "noise_std": 0.2}
          ],
          "outcomes": [
            {"id": "y", "parents": [{"disease": "d1", "weight": 0.5}, {"disease": "d2", "weight": 1.0}], "threshold": 5.0, "slope": 1.0}
          ]
        }"#,
    )
    .unwrap()
}

pub fn small_cohort(n: usize, seed: u64) -> Cohort {
    let config = SimulationConfig {
        n_patients: n,
        rng_seed: seed,
        ..SimulationConfig::default()
    };
    simulate_cohort(&small_structure(), &config).unwrap()
}
