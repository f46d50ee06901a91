//! Seeded random generation of causal structures at experiment scale.
//!
//! Coefficients are drawn from fixed ranges; diagnostic thresholds and
//! outcome thresholds are then calibrated on a small pilot cohort so that
//! every disease and outcome reaches a usable prevalence.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::simulate::{
    patient_rng, simulate_cohort_with_policy, PatientDraws, SimulationConfig, TreatmentPolicy,
};
use super::structure::{
    CausalStructure, DiseaseDoc, DiseaseLink, LabDoc, MedicationLine, OutcomeDoc, Progression,
    StructureDocument,
};
use crate::error::{Error, Result};
use crate::stats::{quantile_sorted, std_dev};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomStructureParams {
    pub n_diseases: usize,
    pub n_labs: usize,
    pub n_outcomes: usize,
    /// Probability of a parent edge between an earlier and a later disease.
    pub edge_density: f64,
    pub n_windows: usize,
    pub seed: u64,
    /// Size of the calibration cohort.
    pub pilot_patients: usize,
    /// Range of the fraction of untreated patients diagnosed with each disease.
    pub disease_prevalence: (f64, f64),
    /// Range of the fraction of patients reaching each outcome by the last window.
    pub outcome_prevalence: (f64, f64),
    /// Onset hazard steepness in units of the outcome score's spread.
    pub outcome_sharpness: f64,
    /// Multiplier on the first-window medication effect range.
    pub effect_scale: f64,
}

impl Default for RandomStructureParams {
    fn default() -> Self {
        RandomStructureParams {
            n_diseases: 10,
            n_labs: 20,
            n_outcomes: 4,
            edge_density: 0.3,
            n_windows: 60,
            seed: 0,
            pilot_patients: 400,
            disease_prevalence: (0.35, 0.65),
            outcome_prevalence: (0.25, 0.4),
            outcome_sharpness: 2.5,
            effect_scale: 1.0,
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

/// Build a random structure; deterministic given `params`.
pub fn random_structure(params: &RandomStructureParams) -> Result<CausalStructure> {
    if params.n_diseases == 0 {
        return Err(Error::EmptyStructure);
    }
    if params.n_labs == 0 {
        return Err(Error::Structure("random structure needs at least one lab".into()));
    }
    if params.n_windows < 2 {
        return Err(Error::Structure("random structure needs at least two windows".into()));
    }
    if !(params.effect_scale >= 0.0) {
        return Err(Error::Config("effect scale must be non-negative".into()));
    }
    if !(0.0..=1.0).contains(&params.edge_density) {
        return Err(Error::Config("edge density must lie in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let disease_id = |i: usize| format!("disease{}", i + 1);

    let mut diseases = Vec::with_capacity(params.n_diseases);
    for i in 0..params.n_diseases {
        let mut parents = Vec::new();
        for j in 0..i {
            if parents.len() < 3 && rng.gen::<f64>() < params.edge_density {
                parents.push(DiseaseLink {
                    disease: disease_id(j),
                    weight: uniform(&mut rng, (0.01, 0.03)),
                });
            }
        }
        let n_lines = rng.gen_range(1..=3);
        let lines = (0..n_lines)
            .map(|k| {
                let initial = params.effect_scale * uniform(&mut rng, (0.08, 0.15)) * (1.0 + 0.5 * k as f64);
                let decay = uniform(&mut rng, (0.90, 0.96));
                MedicationLine {
                    effect_schedule: (0..params.n_windows)
                        .map(|e| -initial * decay.powi(e as i32))
                        .collect(),
                }
            })
            .collect();
        diseases.push(DiseaseDoc {
            id: disease_id(i),
            parents,
            progression: Progression {
                persistence: uniform(&mut rng, (1.01, 1.04)),
                drift: uniform(&mut rng, (0.0, 0.02)),
                noise_std: uniform(&mut rng, (0.02, 0.05)),
            },
            init_parent_scale: 0.5,
            lines,
            diagnostic_lab: format!("lab{}", i % params.n_labs + 1),
            threshold: f64::MAX,
        });
    }

    let mut labs = Vec::with_capacity(params.n_labs);
    for l in 0..params.n_labs {
        let baseline = uniform(&mut rng, (60.0, 140.0));
        let mut targets: Vec<usize> = (0..params.n_diseases).filter(|d| d % params.n_labs == l).collect();
        if targets.is_empty() {
            let mut all: Vec<usize> = (0..params.n_diseases).collect();
            all.shuffle(&mut rng);
            targets.extend(all.into_iter().take(rng.gen_range(1..=2)));
            targets.sort_unstable();
        }
        let weights: Vec<DiseaseLink> = targets
            .iter()
            .map(|&d| DiseaseLink {
                disease: disease_id(d),
                weight: baseline * uniform(&mut rng, (0.01, 0.03)),
            })
            .collect();
        let total: f64 = weights.iter().map(|w| w.weight).sum();
        labs.push(LabDoc {
            id: format!("lab{}", l + 1),
            baseline,
            weights,
            offset: -0.5 * total,
            floor: Some(baseline),
            noise_std: 0.02 * baseline,
            units: "units".into(),
        });
    }

    let mut outcomes = Vec::with_capacity(params.n_outcomes);
    let late: Vec<usize> = (params.n_diseases / 2..params.n_diseases).collect();
    for o in 0..params.n_outcomes {
        let pool: Vec<usize> = if late.len() >= 2 { late.clone() } else { (0..params.n_diseases).collect() };
        let k = rng.gen_range(2..=3).min(pool.len());
        let mut chosen: Vec<usize> = pool.choose_multiple(&mut rng, k).copied().collect();
        chosen.sort_unstable();
        outcomes.push(OutcomeDoc {
            id: format!("outcome{}", o + 1),
            parents: chosen
                .iter()
                .map(|&d| DiseaseLink {
                    disease: disease_id(d),
                    weight: uniform(&mut rng, (0.5, 1.0)),
                })
                .collect(),
            threshold: f64::MAX,
            slope: 1.0,
            earliest_onset: Some(params.n_windows / 2),
        });
    }

    let mut doc = StructureDocument {
        n_windows: params.n_windows,
        window_length_years: 0.5,
        diseases,
        labs,
        outcomes,
    };
    let disease_targets: Vec<f64> = (0..params.n_diseases)
        .map(|_| uniform(&mut rng, params.disease_prevalence))
        .collect();
    let outcome_targets: Vec<f64> = (0..params.n_outcomes)
        .map(|_| uniform(&mut rng, params.outcome_prevalence))
        .collect();
    calibrate(&mut doc, params, &disease_targets, &outcome_targets)?;
    CausalStructure::from_document(&doc)
}

fn calibrate(
    doc: &mut StructureDocument,
    params: &RandomStructureParams,
    disease_targets: &[f64],
    outcome_targets: &[f64],
) -> Result<()> {
    let pilot = SimulationConfig {
        n_patients: params.pilot_patients.max(20),
        observation_rate: 1.0,
        rng_seed: params.seed ^ 0x5eed_0f_c0ffee,
        ..SimulationConfig::default()
    };
    // Thresholds are irrelevant to untreated dynamics, so a provisional
    // structure with infinite thresholds gives the natural lab maxima.
    let provisional = CausalStructure::from_document(doc)?;
    let untreated = simulate_cohort_with_policy(&provisional, &pilot, &TreatmentPolicy::Untreated)?;
    for (d, disease) in doc.diseases.iter_mut().enumerate() {
        let lab = provisional.diseases[d].diagnostic_lab;
        let mut maxima: Vec<f64> = untreated
            .patients
            .iter()
            .map(|p| {
                p.truth()
                    .map(|t| t.labs_true.iter().map(|row| row[lab]).fold(f64::MIN, f64::max))
                    .unwrap_or(f64::MIN)
            })
            .collect();
        maxima.sort_by(f64::total_cmp);
        disease.threshold = quantile_sorted(&maxima, 1.0 - disease_targets[d]);
    }

    // Outcome score spread under the natural policy sets the hazard slope.
    let treated_structure = CausalStructure::from_document(doc)?;
    let natural = simulate_cohort_with_policy(&treated_structure, &pilot, &TreatmentPolicy::Natural)?;
    let mid = params.n_windows * 3 / 4;
    for (o, outcome) in treated_structure.outcomes.iter().enumerate() {
        let scores: Vec<f64> = natural
            .patients
            .iter()
            .filter_map(|p| p.truth().ok().map(|t| outcome.score(&t.severity[mid])))
            .collect();
        let spread = std_dev(&scores).max(1e-6);
        doc.outcomes[o].slope = params.outcome_sharpness / spread;
    }
    let with_slopes = CausalStructure::from_document(doc)?;
    // the same streams the pilot simulation consumed
    let uniforms: Vec<Vec<Vec<f64>>> = natural
        .patients
        .iter()
        .map(|p| {
            PatientDraws::draw(&with_slopes, &pilot, &mut patient_rng(pilot.rng_seed, p.patient_id))
                .outcome_uniform
        })
        .collect();
    for (o, outcome) in with_slopes.outcomes.iter().enumerate() {
        let prevalence = |threshold: f64| {
            let mut candidate = outcome.clone();
            candidate.threshold = threshold;
            let hits = natural
                .patients
                .iter()
                .zip(&uniforms)
                .filter(|(p, u)| {
                    let truth = p.truth().expect("pilot carries ground truth");
                    (candidate.earliest_onset..params.n_windows)
                        .any(|t| u[t][o] < candidate.hazard(&truth.severity[t]))
                })
                .count();
            hits as f64 / natural.patients.len() as f64
        };
        let scores: Vec<f64> = natural
            .patients
            .iter()
            .flat_map(|p| p.truth().ok().map(|t| outcome.score(&t.severity[params.n_windows - 1])))
            .collect();
        let (mut lo, mut hi) = (
            scores.iter().cloned().fold(f64::MAX, f64::min) - 10.0 / outcome.slope,
            scores.iter().cloned().fold(f64::MIN, f64::max) + 10.0 / outcome.slope,
        );
        for _ in 0..60 {
            let midpoint = 0.5 * (lo + hi);
            if prevalence(midpoint) > outcome_targets[o] {
                lo = midpoint;
            } else {
                hi = midpoint;
            }
        }
        doc.outcomes[o].threshold = 0.5 * (lo + hi);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> RandomStructureParams {
        RandomStructureParams {
            n_diseases: 4,
            n_labs: 6,
            n_outcomes: 2,
            n_windows: 30,
            pilot_patients: 100,
            seed: 3,
            ..RandomStructureParams::default()
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let a = random_structure(&small()).unwrap();
        let b = random_structure(&small()).unwrap();
        assert_eq!(a, b);
        let c = random_structure(&RandomStructureParams { seed: 4, ..small() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn experiment_scale_satisfies_invariants() {
        let s = random_structure(&RandomStructureParams {
            pilot_patients: 100,
            seed: 11,
            ..RandomStructureParams::default()
        })
        .unwrap();
        assert_eq!(s.diseases.len(), 10);
        assert_eq!(s.labs.len(), 20);
        assert_eq!(s.outcomes.len(), 4);
        assert!(s.diseases.iter().all(|d| (1..=3).contains(&d.lines.len())));
        assert!(s.labs.iter().all(|l| !l.weights.is_empty()));
        assert!(s.outcomes.iter().all(|o| !o.parents.is_empty() && o.earliest_onset == 30));
        assert!(s.diseases.iter().all(|d| d.threshold.is_finite()));
        // parents always have a smaller index, so the order is the identity
        assert_eq!(s.topological_order(), (0..10).collect::<Vec<_>>().as_slice());
    }

    #[test]
    fn zero_diseases_is_an_error() {
        let p = RandomStructureParams { n_diseases: 0, ..small() };
        assert!(matches!(random_structure(&p), Err(Error::EmptyStructure)));
    }
}
