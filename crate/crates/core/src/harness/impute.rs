//! Missing-lab imputation: last observation carried forward within a patient,
//! then the training-cohort mean of the lab.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::synth::{Cohort, PatientTrajectory};

#[derive(Debug, Clone, PartialEq)]
pub struct ImputationStats {
    pub lab_means: Vec<f64>,
}

impl ImputationStats {
    /// Per-lab mean over every observed cell of the given patients.
    pub fn fit<'a>(
        patients: impl IntoIterator<Item = &'a PatientTrajectory>,
        n_labs: usize,
    ) -> Result<Self> {
        let mut sums = vec![0.0; n_labs];
        let mut counts = vec![0usize; n_labs];
        for p in patients {
            for row in &p.labs_observed {
                for (l, v) in row.iter().enumerate() {
                    if let Some(v) = v {
                        sums[l] += v;
                        counts[l] += 1;
                    }
                }
            }
        }
        if let Some(l) = counts.iter().position(|&c| c == 0) {
            return Err(Error::Imputation(format!("lab {l} is never observed in the training patients")));
        }
        Ok(ImputationStats {
            lab_means: sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect(),
        })
    }

    /// `[window][lab]` with every cell filled.
    pub fn impute(&self, patient: &PatientTrajectory) -> Vec<Vec<f64>> {
        let mut last: Vec<Option<f64>> = vec![None; self.lab_means.len()];
        patient
            .labs_observed
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(l, v)| {
                        if v.is_some() {
                            last[l] = *v;
                        }
                        last[l].unwrap_or(self.lab_means[l])
                    })
                    .collect()
            })
            .collect()
    }
}

/// Imputed labs of a whole cohort, addressable by patient id.
#[derive(Debug, Clone)]
pub struct ImputedLabs {
    index: HashMap<u64, usize>,
    values: Vec<Vec<Vec<f64>>>,
}

impl ImputedLabs {
    pub fn new(cohort: &Cohort, stats: &ImputationStats) -> Self {
        ImputedLabs {
            index: cohort.patients.iter().enumerate().map(|(i, p)| (p.patient_id, i)).collect(),
            values: cohort.patients.iter().map(|p| stats.impute(p)).collect(),
        }
    }

    /// Cohort-wide means, for estimators that never see outcome labels.
    pub fn from_cohort(cohort: &Cohort) -> Result<Self> {
        let stats = ImputationStats::fit(&cohort.patients, cohort.n_labs)?;
        Ok(Self::new(cohort, &stats))
    }

    pub fn patient(&self, patient_id: u64) -> Option<&[Vec<f64>]> {
        self.index.get(&patient_id).map(|&i| self.values[i].as_slice())
    }

    pub fn at(&self, patient_id: u64, window: usize) -> Result<&[f64]> {
        let rows = self
            .patient(patient_id)
            .ok_or_else(|| Error::Alignment(format!("patient {patient_id} has no imputed labs")))?;
        rows.get(window).map(Vec::as_slice).ok_or(Error::Horizon {
            window,
            last: rows.len().saturating_sub(1),
        })
    }
}
