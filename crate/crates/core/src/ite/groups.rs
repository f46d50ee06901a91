//! Comparable treatment-combination groups.
//!
//! A patient-window `(p, t)` with `t >= 1` joins the treated side of the pair
//! `(M_2 -> M_1)` when its combination moves from `M_2` at `t - 1` to a strict
//! superset `M_1` at `t`. Every patient-window holding `M_2` whose next window
//! exists joins the control side, including earlier windows of treated patients.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::synth::Cohort;
use crate::treatment::TreatmentVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Member {
    pub patient_id: u64,
    pub window: usize,
}

impl Member {
    pub fn new(patient_id: u64, window: usize) -> Self {
        Member { patient_id, window }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComparableGroupPair {
    pub treated_key: TreatmentVector,
    pub control_key: TreatmentVector,
    pub m_add: Vec<usize>,
    /// Sorted by `(patient_id, window)`.
    pub treated: Vec<Member>,
    /// Sorted by `(patient_id, window)`.
    pub controls: Vec<Member>,
}

impl ComparableGroupPair {
    /// `M_2>M_1` as digit strings.
    pub fn key(&self) -> String {
        format!("{}>{}", self.control_key, self.treated_key)
    }
}

impl fmt::Display for ComparableGroupPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (+{:?})", self.key(), self.m_add)
    }
}

/// Windows `t >= 1` whose combination is a strict superset of the one at `t - 1`.
pub fn additions(meds: &[TreatmentVector]) -> impl Iterator<Item = usize> + '_ {
    (1..meds.len()).filter(move |&t| {
        let (prev, cur) = (&meds[t - 1], &meds[t]);
        cur != prev && prev.active().all(|d| cur.get(d))
    })
}

pub fn enumerate_group_pairs(cohort: &Cohort, min_group_size: usize) -> Vec<ComparableGroupPair> {
    let mut transitions: BTreeMap<(TreatmentVector, TreatmentVector), Vec<Member>> = BTreeMap::new();
    for p in &cohort.patients {
        for t in additions(&p.meds) {
            transitions
                .entry((p.meds[t - 1].clone(), p.meds[t].clone()))
                .or_default()
                .push(Member::new(p.patient_id, t));
        }
    }
    if transitions.is_empty() {
        return Vec::new();
    }

    let mut holders: BTreeMap<&TreatmentVector, Vec<Member>> =
        transitions.keys().map(|(prev, _)| (prev, Vec::new())).collect();
    for p in &cohort.patients {
        let last = p.meds.len().saturating_sub(1);
        for (t, m) in p.meds.iter().enumerate().take(last) {
            if let Some(list) = holders.get_mut(m) {
                list.push(Member::new(p.patient_id, t));
            }
        }
    }

    let mut pairs = Vec::new();
    for ((prev, cur), treated) in &transitions {
        let controls = &holders[prev];
        if treated.len() < min_group_size || controls.len() < min_group_size {
            continue;
        }
        let (mut treated, mut controls) = (treated.clone(), controls.clone());
        treated.sort_unstable();
        controls.sort_unstable();
        pairs.push(ComparableGroupPair {
            treated_key: cur.clone(),
            control_key: prev.clone(),
            m_add: cur.added_since(prev),
            treated,
            controls,
        });
    }
    pairs
}
