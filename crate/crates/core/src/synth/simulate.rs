//! Forward simulation of patients through a [`CausalStructure`].
//!
//! Every random quantity a patient needs is drawn up front into
//! [`PatientDraws`] from a stream derived from `(seed, patient_id)`. The
//! medication policy therefore never changes rng consumption, which is what
//! makes treated/untreated clones directly comparable.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::structure::CausalStructure;
use crate::error::{Error, Result};
use crate::treatment::TreatmentVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n_patients: usize,
    pub observation_rate: f64,
    pub escalation_margin: f64,
    /// Log-scale standard deviation of the individual effect multiplier `E^I`.
    pub individual_effect_sigma: f64,
    pub rng_seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            n_patients: 1000,
            observation_rate: 0.5,
            escalation_margin: 0.10,
            individual_effect_sigma: 0.25,
            rng_seed: 0,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.observation_rate > 0.0 && self.observation_rate <= 1.0) {
            return Err(Error::Config(format!(
                "observation rate must lie in (0, 1], got {}",
                self.observation_rate
            )));
        }
        if !(self.escalation_margin > 0.0) {
            return Err(Error::Config("escalation margin must be positive".into()));
        }
        if !(self.individual_effect_sigma >= 0.0) {
            return Err(Error::Config("individual effect sigma must be non-negative".into()));
        }
        Ok(())
    }
}

/// How medications are assigned during simulation.
#[derive(Debug, Clone, PartialEq)]
pub enum TreatmentPolicy {
    /// Diagnosis-triggered escalation ladders.
    Natural,
    /// No medication in any window.
    Untreated,
    /// Exactly the listed `(digit, start_window)` lines, nothing else.
    Forced(Vec<(usize, usize)>),
}

/// Noiseless quantities only the simulator knows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// `[window][disease]`
    pub severity: Vec<Vec<f64>>,
    /// `[window][lab]`
    pub labs_true: Vec<Vec<f64>>,
    /// `[disease][line]`
    pub individual_effects: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientTrajectory {
    pub patient_id: u64,
    /// `[window][lab]`, `None` where unobserved.
    pub labs_observed: Vec<Vec<Option<f64>>>,
    /// `[window]`
    pub meds: Vec<TreatmentVector>,
    /// `[window][code]`, diseases first, then outcomes.
    pub dx: Vec<Vec<bool>>,
    pub truth: Option<GroundTruth>,
}

impl PatientTrajectory {
    pub fn n_windows(&self) -> usize {
        self.meds.len()
    }

    pub fn truth(&self) -> Result<&GroundTruth> {
        self.truth
            .as_ref()
            .ok_or_else(|| Error::Data(format!("patient {} carries no ground truth", self.patient_id)))
    }

    /// First window at which `digit` is on.
    pub fn line_start(&self, digit: usize) -> Option<usize> {
        self.meds.iter().position(|m| m.get(digit))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub n_windows: usize,
    pub n_labs: usize,
    pub n_digits: usize,
    pub n_codes: usize,
    pub patients: Vec<PatientTrajectory>,
}

impl Cohort {
    pub fn observed_fraction(&self) -> f64 {
        let (mut seen, mut total) = (0usize, 0usize);
        for p in &self.patients {
            for row in &p.labs_observed {
                total += row.len();
                seen += row.iter().filter(|v| v.is_some()).count();
            }
        }
        if total == 0 {
            0.0
        } else {
            seen as f64 / total as f64
        }
    }
}

/// Random inputs for one patient, drawn in a fixed order.
#[derive(Debug, Clone)]
pub struct PatientDraws {
    pub initial_uniform: Vec<f64>,
    pub individual_effects: Vec<Vec<f64>>,
    /// `[window][disease]`, standard normal.
    pub severity_noise: Vec<Vec<f64>>,
    /// `[window][lab]`
    pub observed: Vec<Vec<bool>>,
    /// `[window][lab]`, standard normal.
    pub observation_noise: Vec<Vec<f64>>,
    /// `[window][outcome]`
    pub outcome_uniform: Vec<Vec<f64>>,
}

impl PatientDraws {
    pub fn draw(structure: &CausalStructure, config: &SimulationConfig, rng: &mut ChaCha8Rng) -> Self {
        let t = structure.n_windows;
        let n_d = structure.diseases.len();
        let n_l = structure.labs.len();
        let lognormal = LogNormal::new(0.0, config.individual_effect_sigma.max(0.0))
            .expect("sigma validated non-negative");
        let initial_uniform = (0..n_d).map(|_| rng.gen::<f64>()).collect();
        let individual_effects = structure
            .diseases
            .iter()
            .map(|d| d.lines.iter().map(|_| lognormal.sample(rng)).collect())
            .collect();
        let severity_noise = (0..t)
            .map(|_| (0..n_d).map(|_| StandardNormal.sample(rng)).collect())
            .collect();
        let observed = (0..t)
            .map(|_| (0..n_l).map(|_| rng.gen::<f64>() < config.observation_rate).collect())
            .collect();
        let observation_noise = (0..t)
            .map(|_| (0..n_l).map(|_| StandardNormal.sample(rng)).collect())
            .collect();
        let outcome_uniform = (0..t)
            .map(|_| (0..structure.outcomes.len()).map(|_| rng.gen::<f64>()).collect())
            .collect();
        PatientDraws {
            initial_uniform,
            individual_effects,
            severity_noise,
            observed,
            observation_noise,
            outcome_uniform,
        }
    }
}

/// Rng stream for one patient: independent of scheduling and of other patients.
pub fn patient_rng(seed: u64, patient_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(patient_id);
    rng
}

/// Initial severity vector `S_0`: roots uniform on [0, 1), children
/// `max(0, scale * mean(parent severities) + uniform)`.
pub fn init_patient(structure: &CausalStructure, rng: &mut impl Rng) -> Vec<f64> {
    let uniforms: Vec<f64> = (0..structure.diseases.len()).map(|_| rng.gen()).collect();
    init_from_uniforms(structure, &uniforms, &vec![None; structure.diseases.len()])
}

/// [`init_patient`] with some severities pinned; pinned diseases still consume their draw.
pub fn init_patient_conditioned(
    structure: &CausalStructure,
    rng: &mut impl Rng,
    pinned: &[Option<f64>],
) -> Vec<f64> {
    let uniforms: Vec<f64> = (0..structure.diseases.len()).map(|_| rng.gen()).collect();
    init_from_uniforms(structure, &uniforms, pinned)
}

fn init_from_uniforms(structure: &CausalStructure, uniforms: &[f64], pinned: &[Option<f64>]) -> Vec<f64> {
    let mut s = vec![0.0; structure.diseases.len()];
    for &d in structure.topological_order() {
        let disease = &structure.diseases[d];
        s[d] = match pinned.get(d).copied().flatten() {
            Some(v) => v,
            None if disease.parents.is_empty() => uniforms[d],
            None => {
                let mean = disease.parents.iter().map(|&(p, _)| s[p]).sum::<f64>()
                    / disease.parents.len() as f64;
                (disease.init_parent_scale * mean + uniforms[d]).max(0.0)
            }
        };
    }
    s
}

/// Next-window treatment vector. A diagnosed disease with no active line starts
/// line 1; a diagnosed disease whose diagnostic lab exceeds
/// `threshold * (1 + margin)` moves one rung up its ladder if one remains.
pub fn prescribe(
    labs_true: &[f64],
    active: &TreatmentVector,
    diagnosed: &[bool],
    structure: &CausalStructure,
    margin: f64,
) -> TreatmentVector {
    let mut next = active.clone();
    for (d, disease) in structure.diseases.iter().enumerate() {
        if !diagnosed[d] {
            continue;
        }
        let n_active = (0..disease.lines.len())
            .take_while(|&k| active.get(structure.digit(d, k)))
            .count();
        if n_active == 0 {
            next.set(structure.digit(d, 0), true);
        } else if n_active < disease.lines.len()
            && labs_true[disease.diagnostic_lab] > disease.threshold * (1.0 + margin)
        {
            next.set(structure.digit(d, n_active), true);
        }
    }
    next
}

/// Allocate a trajectory with window 0 filled in (severity, labs, diagnoses).
fn start_trajectory(structure: &CausalStructure, draws: &PatientDraws, patient_id: u64) -> PatientTrajectory {
    let t = structure.n_windows;
    let s0 = init_from_uniforms(structure, &draws.initial_uniform, &vec![None; structure.diseases.len()]);
    let mut severity = vec![vec![0.0; structure.diseases.len()]; t];
    let mut labs_true = vec![vec![0.0; structure.labs.len()]; t];
    for (l, lab) in structure.labs.iter().enumerate() {
        let v = lab.baseline + lab.increment(&s0);
        labs_true[0][l] = lab.floor.map_or(v, |f| v.max(f));
    }
    severity[0] = s0;
    let mut dx = vec![vec![false; structure.n_codes()]; t];
    dx[0] = diagnose(structure, &labs_true[0], &severity[0], None, &draws.outcome_uniform[0], 0);
    PatientTrajectory {
        patient_id,
        labs_observed: vec![vec![None; structure.labs.len()]; t],
        meds: vec![TreatmentVector::zeros(structure.n_digits()); t],
        dx,
        truth: Some(GroundTruth {
            severity,
            labs_true,
            individual_effects: draws.individual_effects.clone(),
        }),
    }
}

fn diagnose(
    structure: &CausalStructure,
    labs: &[f64],
    severity: &[f64],
    previous: Option<&[bool]>,
    outcome_uniform: &[f64],
    t: usize,
) -> Vec<bool> {
    let n_d = structure.diseases.len();
    let mut dx = vec![false; structure.n_codes()];
    for (d, disease) in structure.diseases.iter().enumerate() {
        dx[d] = previous.is_some_and(|p| p[d]) || labs[disease.diagnostic_lab] > disease.threshold;
    }
    for (o, outcome) in structure.outcomes.iter().enumerate() {
        let code = n_d + o;
        dx[code] = t >= outcome.earliest_onset
            && (previous.is_some_and(|p| p[code]) || outcome_uniform[o] < outcome.hazard(severity));
    }
    dx
}

/// Fill severity, noiseless labs and diagnoses at window `t` from window `t - 1`:
/// `s_t = F_s(s_{t-1}, Pa(s_{t-1})) + E_s . M_{t-1}`, `l_t = l_{t-1} + G_l(S_t)`, `D_t = C(L_t)`.
pub fn step_patient(
    patient: &mut PatientTrajectory,
    structure: &CausalStructure,
    draws: &PatientDraws,
    t: usize,
) -> Result<()> {
    if t == 0 || t >= structure.n_windows || t >= patient.n_windows() {
        return Err(Error::Index(format!(
            "step window {t} outside 1..{}",
            structure.n_windows.min(patient.n_windows())
        )));
    }
    let starts: Vec<Option<usize>> = (0..structure.n_digits())
        .map(|digit| patient.meds[..t].iter().position(|m| m.get(digit)))
        .collect();
    let prev_meds = patient.meds[t - 1].clone();
    let truth = patient
        .truth
        .as_mut()
        .ok_or_else(|| Error::Data("cannot step a trajectory without ground truth".into()))?;

    let prev = truth.severity[t - 1].clone();
    let mut next = vec![0.0; prev.len()];
    for (d, disease) in structure.diseases.iter().enumerate() {
        let mut s = disease.persistence * prev[d]
            + disease.parents.iter().map(|&(p, w)| w * prev[p]).sum::<f64>()
            + disease.drift
            + disease.noise_std * draws.severity_noise[t][d];
        for (k, line) in disease.lines.iter().enumerate() {
            let digit = structure.digit(d, k);
            if prev_meds.get(digit) {
                let start = starts[digit].expect("active line has a start window");
                s += line.population_effect(t - start) * draws.individual_effects[d][k];
            }
        }
        next[d] = s.max(0.0);
    }
    for (l, lab) in structure.labs.iter().enumerate() {
        let v = truth.labs_true[t - 1][l] + lab.increment(&next);
        truth.labs_true[t][l] = lab.floor.map_or(v, |f| v.max(f));
    }
    patient.dx[t] = diagnose(
        structure,
        &truth.labs_true[t],
        &next,
        Some(&patient.dx[t - 1]),
        &draws.outcome_uniform[t],
        t,
    );
    truth.severity[t] = next;
    Ok(())
}

fn apply_policy(
    patient: &mut PatientTrajectory,
    structure: &CausalStructure,
    policy: &TreatmentPolicy,
    margin: f64,
    t: usize,
) {
    patient.meds[t] = match policy {
        TreatmentPolicy::Untreated => TreatmentVector::zeros(structure.n_digits()),
        TreatmentPolicy::Forced(lines) => {
            let mut m = TreatmentVector::zeros(structure.n_digits());
            for &(digit, start) in lines {
                if t >= start {
                    m.set(digit, true);
                }
            }
            m
        }
        TreatmentPolicy::Natural => {
            let active = if t == 0 {
                TreatmentVector::zeros(structure.n_digits())
            } else {
                patient.meds[t - 1].clone()
            };
            let labs = &patient.truth.as_ref().expect("simulated trajectory").labs_true[t];
            prescribe(labs, &active, &patient.dx[t], structure, margin)
        }
    };
}

/// Simulate one patient over all windows from pre-drawn randomness.
pub fn simulate_patient_with(
    structure: &CausalStructure,
    config: &SimulationConfig,
    draws: &PatientDraws,
    patient_id: u64,
    policy: &TreatmentPolicy,
) -> PatientTrajectory {
    let mut patient = start_trajectory(structure, draws, patient_id);
    apply_policy(&mut patient, structure, policy, config.escalation_margin, 0);
    for t in 1..structure.n_windows {
        step_patient(&mut patient, structure, draws, t).expect("window in range");
        apply_policy(&mut patient, structure, policy, config.escalation_margin, t);
    }
    let truth = patient.truth.as_ref().expect("simulated trajectory");
    for t in 0..structure.n_windows {
        for (l, lab) in structure.labs.iter().enumerate() {
            if draws.observed[t][l] {
                patient.labs_observed[t][l] =
                    Some(truth.labs_true[t][l] + lab.noise_std * draws.observation_noise[t][l]);
            }
        }
    }
    patient
}

pub fn simulate_patient(
    structure: &CausalStructure,
    config: &SimulationConfig,
    patient_id: u64,
    policy: &TreatmentPolicy,
) -> PatientTrajectory {
    let mut rng = patient_rng(config.rng_seed, patient_id);
    let draws = PatientDraws::draw(structure, config, &mut rng);
    simulate_patient_with(structure, config, &draws, patient_id, policy)
}

pub fn simulate_cohort(structure: &CausalStructure, config: &SimulationConfig) -> Result<Cohort> {
    simulate_cohort_with_policy(structure, config, &TreatmentPolicy::Natural)
}

/// Simulate `config.n_patients` patients with ids `0..n`. Output order and
/// values do not depend on the rayon pool size.
pub fn simulate_cohort_with_policy(
    structure: &CausalStructure,
    config: &SimulationConfig,
    policy: &TreatmentPolicy,
) -> Result<Cohort> {
    config.validate()?;
    let patients = (0..config.n_patients as u64)
        .into_par_iter()
        .map(|id| simulate_patient(structure, config, id, policy))
        .collect();
    Ok(Cohort {
        n_windows: structure.n_windows,
        n_labs: structure.labs.len(),
        n_digits: structure.n_digits(),
        n_codes: structure.n_codes(),
        patients,
    })
}
