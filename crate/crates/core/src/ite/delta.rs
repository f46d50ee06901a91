//! Sequential individualized treatment effects.
//!
//! For a matched pair `(p_1, t_1) ~ (p_2, t_2)` the effect is
//! `L(p_1, t_1 + 1) - L(p_2, t_2 + 1)` on imputed labs, attached to window
//! `t_1 + 1` of the treated patient. Windows without a new medication carry
//! zeros; additions that could not be matched carry zeros and the
//! `unmatched` flag.

use std::collections::{BTreeMap, HashSet};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::groups::{additions, enumerate_group_pairs, ComparableGroupPair, Member};
use super::matching::{default_caliper, match_groups, MatchedPair, Scored};
use super::propensity::{fit_propensity, PropensityModel, DEFAULT_PROPENSITY_RIDGE};
use crate::error::{Error, Result};
use crate::harness::impute::ImputedLabs;
use crate::synth::{CausalStructure, Cohort};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Caliper {
    /// `0.2 * sd` of the fitted probabilities over the pair's population.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelevantLabs {
    /// With a structure: labs loaded on outcome ancestors, masked per pair to
    /// the labs of the diseases targeted by the added lines. Without one: all labs.
    Auto,
    Explicit(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IteConfig {
    pub caliper: Caliper,
    pub min_group_size: usize,
    pub relevant_labs: RelevantLabs,
    pub ridge: f64,
}

impl Default for IteConfig {
    fn default() -> Self {
        IteConfig {
            caliper: Caliper::Auto,
            min_group_size: 5,
            relevant_labs: RelevantLabs::Auto,
            ridge: DEFAULT_PROPENSITY_RIDGE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRecord {
    pub patient_id: u64,
    pub window: usize,
    pub delta: Vec<f64>,
    pub unmatched: bool,
    pub control: Option<Member>,
}

/// Effect of one matched pair over `relevant_labs`.
pub fn compute_delta(matched: &MatchedPair, imputed: &ImputedLabs, relevant_labs: &[usize]) -> Result<DeltaRecord> {
    let t = matched.treated;
    let c = matched.control;
    let own = imputed.at(t.patient_id, t.window + 1)?;
    let other = imputed.at(c.patient_id, c.window + 1)?;
    let delta = relevant_labs
        .iter()
        .map(|&l| match (own.get(l), other.get(l)) {
            (Some(a), Some(b)) => Ok(a - b),
            _ => Err(Error::Index(format!("lab {l} of {}", own.len()))),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DeltaRecord {
        patient_id: t.patient_id,
        window: t.window + 1,
        delta,
        unmatched: false,
        control: Some(c),
    })
}

/// Per-patient effect sequences over the lab list `relevant_labs`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaSet {
    pub relevant_labs: Vec<usize>,
    pub n_windows: usize,
    pub patient_ids: Vec<u64>,
    /// Only windows with an addition; everything else is zero.
    pub records: BTreeMap<(u64, usize), DeltaRecord>,
}

impl DeltaSet {
    pub fn width(&self) -> usize {
        self.relevant_labs.len()
    }

    pub fn get(&self, patient_id: u64, window: usize) -> Option<&DeltaRecord> {
        self.records.get(&(patient_id, window))
    }

    /// Dense `[window] -> (delta, unmatched)` for one patient.
    pub fn sequence(&self, patient_id: u64) -> Result<Vec<(Vec<f64>, bool)>> {
        if self.patient_ids.binary_search(&patient_id).is_err() {
            return Err(Error::Alignment(format!("patient {patient_id} is absent from the effect file")));
        }
        Ok((0..self.n_windows)
            .map(|w| match self.get(patient_id, w) {
                Some(r) => (r.delta.clone(), r.unmatched),
                None => (vec![0.0; self.width()], false),
            })
            .collect())
    }

    /// Check that the set covers the cohort window for window.
    pub fn check_alignment(&self, cohort: &Cohort) -> Result<()> {
        if self.n_windows != cohort.n_windows {
            return Err(Error::Alignment(format!(
                "effect file has {} windows, cohort has {}",
                self.n_windows, cohort.n_windows
            )));
        }
        if let Some(&l) = self.relevant_labs.iter().find(|&&l| l >= cohort.n_labs) {
            return Err(Error::Alignment(format!("effect lab {l} does not exist in the cohort")));
        }
        for p in &cohort.patients {
            if self.patient_ids.binary_search(&p.patient_id).is_err() {
                return Err(Error::Alignment(format!("patient {} is absent from the effect file", p.patient_id)));
            }
        }
        Ok(())
    }

    pub fn n_matched(&self) -> usize {
        self.records.values().filter(|r| !r.unmatched).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReportRow {
    pub pair: String,
    pub treated_count: usize,
    pub match_rate: f64,
    pub mean_gap: f64,
}

#[derive(Debug, Clone)]
pub struct IteEstimate {
    pub deltas: DeltaSet,
    pub report: Vec<MatchReportRow>,
    pub matches: Vec<MatchedPair>,
    /// Treated records whose next window lies beyond the horizon.
    pub dropped_horizon: usize,
}

/// Global lab list and the per-pair mask rule.
fn resolve_labs(config: &IteConfig, cohort: &Cohort, structure: Option<&CausalStructure>) -> Result<Vec<usize>> {
    match (&config.relevant_labs, structure) {
        (RelevantLabs::Explicit(labs), _) => {
            if labs.is_empty() {
                return Err(Error::Config("relevant lab list is empty".into()));
            }
            let mut sorted = labs.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != labs.len() {
                return Err(Error::Config("relevant lab list has duplicates".into()));
            }
            if let Some(&l) = labs.iter().find(|&&l| l >= cohort.n_labs) {
                return Err(Error::Config(format!("relevant lab {l} out of range")));
            }
            Ok(labs.clone())
        }
        (RelevantLabs::Auto, Some(s)) => {
            if s.labs.len() != cohort.n_labs {
                return Err(Error::Alignment("structure and cohort disagree on the lab count".into()));
            }
            let ancestors = s.outcome_ancestors();
            Ok((0..s.labs.len())
                .filter(|&l| s.labs[l].weights.iter().any(|&(d, w)| w != 0.0 && ancestors[d]))
                .collect())
        }
        (RelevantLabs::Auto, None) => Ok((0..cohort.n_labs).collect()),
    }
}

/// Which entries of the global lab list a pair may fill.
fn pair_mask(
    pair: &ComparableGroupPair,
    labs: &[usize],
    config: &IteConfig,
    structure: Option<&CausalStructure>,
) -> Vec<bool> {
    match (&config.relevant_labs, structure) {
        (RelevantLabs::Auto, Some(s)) => {
            let targets: HashSet<usize> = pair.m_add.iter().map(|&d| s.digit_owner(d).0).collect();
            labs.iter()
                .map(|&l| s.labs[l].weights.iter().any(|&(d, w)| w != 0.0 && targets.contains(&d)))
                .collect()
        }
        _ => vec![true; labs.len()],
    }
}

struct PairResult {
    records: Vec<DeltaRecord>,
    matches: Vec<MatchedPair>,
    report: MatchReportRow,
    dropped: usize,
}

fn design(members: &[Member], imputed: &ImputedLabs, n_labs: usize) -> Result<DMatrix<f64>> {
    let mut data = Vec::with_capacity(members.len() * n_labs);
    for m in members {
        data.extend_from_slice(imputed.at(m.patient_id, m.window)?);
    }
    Ok(DMatrix::from_row_slice(members.len(), n_labs, &data))
}

fn process_pair(
    pair: &ComparableGroupPair,
    cohort: &Cohort,
    imputed: &ImputedLabs,
    labs: &[usize],
    mask: &[bool],
    config: &IteConfig,
    fit_patients: Option<&HashSet<u64>>,
) -> Result<PairResult> {
    let (treated, dropped): (Vec<Member>, Vec<Member>) =
        pair.treated.iter().partition(|m| m.window + 1 < cohort.n_windows);
    let in_fit = |m: &&Member| fit_patients.map_or(true, |s| s.contains(&m.patient_id));
    let fit_t: Vec<Member> = treated.iter().filter(in_fit).copied().collect();
    let fit_c: Vec<Member> = pair.controls.iter().filter(in_fit).copied().collect();
    let fit_members: Vec<Member> = fit_t.iter().chain(&fit_c).copied().collect();
    let z: Vec<f64> = (0..fit_members.len()).map(|i| if i < fit_t.len() { 1.0 } else { 0.0 }).collect();

    let model: Option<PropensityModel> = if fit_t.len() < 2 || fit_c.len() < 2 {
        None
    } else {
        match fit_propensity(&design(&fit_members, imputed, cohort.n_labs)?, &z, config.ridge) {
            Ok(mut m) => {
                m.fitted_on = pair.key();
                Some(m)
            }
            Err(Error::DegenerateFit(_) | Error::Numeric(_)) => None,
            Err(e) => return Err(e),
        }
    };
    let Some(model) = model else {
        return Ok(PairResult {
            records: Vec::new(),
            matches: Vec::new(),
            report: MatchReportRow {
                pair: pair.key(),
                treated_count: treated.len(),
                match_rate: 0.0,
                mean_gap: f64::NAN,
            },
            dropped: dropped.len(),
        });
    };

    let score = |members: &[Member]| -> Result<Vec<Scored>> {
        members
            .iter()
            .map(|m| Ok((*m, model.predict(imputed.at(m.patient_id, m.window)?))))
            .collect()
    };
    let treated_scored = score(&treated)?;
    let control_scored = score(&pair.controls)?;
    let caliper = match config.caliper {
        Caliper::Fixed(c) => c,
        Caliper::Auto => {
            let fit_scores: Vec<f64> = score(&fit_members)?.into_iter().map(|(_, p)| p).collect();
            default_caliper(&fit_scores)
        }
    };
    let outcome = if caliper > 0.0 {
        match_groups(&treated_scored, &control_scored, caliper)?
    } else if matches!(config.caliper, Caliper::Auto) {
        // all fitted probabilities identical: only exact ties can match
        match_groups(&treated_scored, &control_scored, f64::MIN_POSITIVE)?
    } else {
        return Err(Error::Config(format!("caliper must be positive, got {caliper}")));
    };

    let mut records = Vec::with_capacity(outcome.pairs.len());
    for m in &outcome.pairs {
        let mut r = compute_delta(m, imputed, labs)?;
        for (v, &keep) in r.delta.iter_mut().zip(mask) {
            if !keep {
                *v = 0.0;
            }
        }
        records.push(r);
    }
    let matched = outcome.pairs.len();
    Ok(PairResult {
        report: MatchReportRow {
            pair: pair.key(),
            treated_count: treated.len(),
            match_rate: if treated.is_empty() { 0.0 } else { matched as f64 / treated.len() as f64 },
            mean_gap: if matched == 0 {
                f64::NAN
            } else {
                outcome.pairs.iter().map(|p| p.propensity_gap).sum::<f64>() / matched as f64
            },
        },
        records,
        matches: outcome.pairs,
        dropped: dropped.len(),
    })
}

/// Full estimation pipeline over a cohort. With `fit_patients`, propensity
/// models (and automatic calipers) use only those patients' records while
/// every treated record is still scored and matched against the full pool.
pub fn build_delta_sequences(
    cohort: &Cohort,
    imputed: &ImputedLabs,
    config: &IteConfig,
    structure: Option<&CausalStructure>,
    fit_patients: Option<&HashSet<u64>>,
) -> Result<IteEstimate> {
    if let Caliper::Fixed(c) = config.caliper {
        if !(c > 0.0) {
            return Err(Error::Config(format!("caliper must be positive, got {c}")));
        }
    }
    let labs = resolve_labs(config, cohort, structure)?;
    let pairs = enumerate_group_pairs(cohort, config.min_group_size.max(1));
    let results: Vec<PairResult> = pairs
        .par_iter()
        .map(|pair| {
            let mask = pair_mask(pair, &labs, config, structure);
            process_pair(pair, cohort, imputed, &labs, &mask, config, fit_patients)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut records = BTreeMap::new();
    let mut report = Vec::with_capacity(results.len());
    let mut matches = Vec::new();
    let mut dropped_horizon = 0;
    for r in results {
        for rec in r.records {
            records.insert((rec.patient_id, rec.window), rec);
        }
        report.push(r.report);
        matches.extend(r.matches);
        dropped_horizon += r.dropped;
    }
    for p in &cohort.patients {
        for t in additions(&p.meds).filter(|t| t + 1 < cohort.n_windows) {
            records.entry((p.patient_id, t + 1)).or_insert_with(|| DeltaRecord {
                patient_id: p.patient_id,
                window: t + 1,
                delta: vec![0.0; labs.len()],
                unmatched: true,
                control: None,
            });
        }
    }
    let mut patient_ids: Vec<u64> = cohort.patients.iter().map(|p| p.patient_id).collect();
    patient_ids.sort_unstable();
    Ok(IteEstimate {
        deltas: DeltaSet {
            relevant_labs: labs,
            n_windows: cohort.n_windows,
            patient_ids,
            records,
        },
        report,
        matches,
        dropped_horizon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::impute::ImputationStats;
    use crate::synth::{simulate_cohort, SimulationConfig};
    use crate::testutil::two_disease_structure;
    use crate::treatment::TreatmentVector;
    use crate::synth::PatientTrajectory;

    fn fixed(id: u64, labs: &[[f64; 1]]) -> PatientTrajectory {
        PatientTrajectory {
            patient_id: id,
            labs_observed: labs.iter().map(|r| vec![Some(r[0])]).collect(),
            meds: vec![TreatmentVector::zeros(1); labs.len()],
            dx: vec![vec![false]; labs.len()],
            truth: None,
        }
    }

    fn two_patient_labs(a: &[[f64; 1]], b: &[[f64; 1]]) -> (Cohort, ImputedLabs) {
        let cohort = Cohort {
            n_windows: a.len(),
            n_labs: 1,
            n_digits: 1,
            n_codes: 1,
            patients: vec![fixed(1, a), fixed(2, b)],
        };
        let imputed = ImputedLabs::from_cohort(&cohort).unwrap();
        (cohort, imputed)
    }

    #[test]
    fn identical_next_labs_give_zero_and_arithmetic_is_direct() {
        let (_, imputed) = two_patient_labs(&[[1.0], [140.0], [3.0]], &[[2.0], [150.0], [140.0]]);
        let pair = |t2| MatchedPair {
            treated: Member::new(1, 0),
            control: Member::new(2, t2),
            propensity_gap: 0.0,
        };
        assert_eq!(compute_delta(&pair(0), &imputed, &[0]).unwrap().delta, vec![-10.0]);
        let same = compute_delta(&pair(1), &imputed, &[0]).unwrap();
        assert_eq!(same.delta, vec![0.0]);
        assert_eq!(same.window, 1);
    }

    #[test]
    fn beyond_horizon_is_an_error() {
        let (_, imputed) = two_patient_labs(&[[1.0], [2.0]], &[[1.0], [2.0]]);
        let m = MatchedPair {
            treated: Member::new(1, 1),
            control: Member::new(2, 0),
            propensity_gap: 0.0,
        };
        assert!(matches!(compute_delta(&m, &imputed, &[0]), Err(Error::Horizon { window: 2, .. })));
    }

    #[test]
    fn windows_without_additions_are_zero_and_every_addition_has_a_record() {
        let s = two_disease_structure();
        let cohort = simulate_cohort(&s, &SimulationConfig { n_patients: 300, ..Default::default() }).unwrap();
        let stats = ImputationStats::fit(&cohort.patients, cohort.n_labs).unwrap();
        let imputed = ImputedLabs::new(&cohort, &stats);
        let est = build_delta_sequences(&cohort, &imputed, &IteConfig::default(), Some(&s), None).unwrap();
        assert!(est.deltas.n_matched() > 0);
        for p in &cohort.patients {
            let seq = est.deltas.sequence(p.patient_id).unwrap();
            let adds: HashSet<usize> = additions(&p.meds).map(|t| t + 1).collect();
            for (w, (delta, flag)) in seq.iter().enumerate() {
                if !adds.contains(&w) {
                    assert!(delta.iter().all(|&v| v == 0.0) && !flag);
                } else if w < cohort.n_windows {
                    assert!(est.deltas.get(p.patient_id, w).is_some());
                }
            }
        }
        for m in &est.matches {
            assert!(m.propensity_gap.is_finite());
        }
    }
}
