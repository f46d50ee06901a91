//! One labelled sequence per eligible patient.
//!
//! Every patient is anchored at `a = T - 1 - horizon`: inputs are the imputed
//! labs of windows `a-K+1 ..= a` and the label is read at `a + horizon`. For
//! diagnosis tasks, patients already carrying the outcome code at any window
//! up to `a` are dropped.

use std::collections::HashSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::impute::ImputedLabs;
use crate::error::{Error, Result};
use crate::ite::DeltaSet;
use crate::models::sequence::SequenceSample;
use crate::synth::Cohort;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Binary onset of a diagnosis code.
    Diagnosis,
    /// Observed value of a lab.
    LabForecast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub task: Task,
    /// Diagnosis code (diseases first, then outcomes) or lab index.
    pub outcome: usize,
    pub time_step: usize,
    pub horizon: usize,
}

impl DatasetSpec {
    /// Latest window usable as the last input window.
    pub fn anchor(&self, n_windows: usize) -> Result<usize> {
        if self.time_step == 0 || self.horizon == 0 {
            return Err(Error::Config("time step and horizon must be at least 1".into()));
        }
        if self.horizon >= n_windows {
            return Err(Error::Config(format!(
                "horizon {} does not fit in {n_windows} windows",
                self.horizon
            )));
        }
        let anchor = n_windows - 1 - self.horizon;
        if anchor + 1 < self.time_step {
            return Err(Error::Config(format!(
                "time step {} with horizon {} needs more than {n_windows} windows",
                self.time_step, self.horizon
            )));
        }
        Ok(anchor)
    }

    pub fn input_windows(&self, n_windows: usize) -> Result<Vec<usize>> {
        let a = self.anchor(n_windows)?;
        Ok((a + 1 - self.time_step..=a).collect())
    }

    fn check(&self, cohort: &Cohort) -> Result<()> {
        let limit = match self.task {
            Task::Diagnosis => cohort.n_codes,
            Task::LabForecast => cohort.n_labs,
        };
        if self.outcome >= limit {
            return Err(Error::Config(format!("outcome {} out of range ({limit} available)", self.outcome)));
        }
        Ok(())
    }
}

fn unlabelled(patient_id: u64, windows: &[usize], imputed: &ImputedLabs) -> Result<SequenceSample> {
    let inputs = windows
        .iter()
        .map(|&w| imputed.at(patient_id, w).map(<[f64]>::to_vec))
        .collect::<Result<Vec<_>>>()?;
    Ok(SequenceSample {
        patient_id,
        windows: windows.to_vec(),
        inputs,
        label: 0.0,
        delta_targets: vec![Vec::new(); windows.len()],
        unmatched: vec![false; windows.len()],
    })
}

/// Labelled samples for the listed patients (all when `None`), in cohort order.
pub fn assemble_dataset(
    cohort: &Cohort,
    imputed: &ImputedLabs,
    spec: &DatasetSpec,
    patients: Option<&HashSet<u64>>,
) -> Result<Vec<SequenceSample>> {
    spec.check(cohort)?;
    let windows = spec.input_windows(cohort.n_windows)?;
    let anchor = *windows.last().expect("time step >= 1");
    let target = anchor + spec.horizon;
    let mut out = Vec::new();
    for p in &cohort.patients {
        if patients.is_some_and(|s| !s.contains(&p.patient_id)) {
            continue;
        }
        if p.n_windows() != cohort.n_windows {
            return Err(Error::Alignment(format!("patient {} has {} windows", p.patient_id, p.n_windows())));
        }
        let label = match spec.task {
            Task::Diagnosis => {
                if p.dx[..=anchor].iter().any(|row| row[spec.outcome]) {
                    continue;
                }
                if p.dx[target][spec.outcome] {
                    1.0
                } else {
                    0.0
                }
            }
            Task::LabForecast => match p.labs_observed[target][spec.outcome] {
                Some(v) => v,
                None => continue,
            },
        };
        let mut s = unlabelled(p.patient_id, &windows, imputed)?;
        s.label = label;
        out.push(s);
    }
    Ok(out)
}

/// Label-free samples over the same input windows, for pretraining.
pub fn assemble_unlabelled(
    cohort: &Cohort,
    imputed: &ImputedLabs,
    spec: &DatasetSpec,
    patients: Option<&HashSet<u64>>,
) -> Result<Vec<SequenceSample>> {
    let windows = spec.input_windows(cohort.n_windows)?;
    cohort
        .patients
        .iter()
        .filter(|p| patients.map_or(true, |s| s.contains(&p.patient_id)))
        .map(|p| unlabelled(p.patient_id, &windows, imputed))
        .collect()
}

/// Per-lab standardisation and per-column effect scaling, both fitted on
/// training patients only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaling {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// Root mean square of the non-zero training effects per column.
    pub delta_scale: Vec<f64>,
}

impl FeatureScaling {
    /// Statistics over every window of the given patients.
    pub fn fit(
        cohort: &Cohort,
        imputed: &ImputedLabs,
        deltas: Option<&DeltaSet>,
        patients: &HashSet<u64>,
    ) -> Result<Self> {
        let d = cohort.n_labs;
        let (mut sum, mut sq, mut n) = (vec![0.0; d], vec![0.0; d], 0usize);
        for p in cohort.patients.iter().filter(|p| patients.contains(&p.patient_id)) {
            let rows = imputed
                .patient(p.patient_id)
                .ok_or_else(|| Error::Alignment(format!("patient {} has no imputed labs", p.patient_id)))?;
            for row in rows {
                for (l, v) in row.iter().enumerate() {
                    sum[l] += v;
                    sq[l] += v * v;
                }
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::Data("no training windows to fit feature scaling".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let sd = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let v = (s / n as f64 - m * m).max(0.0).sqrt();
                if v > 1e-12 {
                    v
                } else {
                    1.0
                }
            })
            .collect();
        let delta_scale = match deltas {
            None => Vec::new(),
            Some(set) => {
                let (mut acc, mut cnt) = (vec![0.0; set.width()], vec![0usize; set.width()]);
                for r in set.records.values().filter(|r| patients.contains(&r.patient_id)) {
                    for (j, v) in r.delta.iter().enumerate() {
                        if *v != 0.0 {
                            acc[j] += v * v;
                            cnt[j] += 1;
                        }
                    }
                }
                acc.iter()
                    .zip(&cnt)
                    .map(|(a, &c)| if c == 0 { 1.0 } else { (a / c as f64).sqrt() })
                    .collect()
            }
        };
        Ok(FeatureScaling { mean, sd, delta_scale })
    }

    pub fn standardize(&self, samples: &mut [SequenceSample]) -> Result<()> {
        for s in samples {
            for row in &mut s.inputs {
                if row.len() != self.mean.len() {
                    return Err(Error::Dimension(format!("{} features, scaling fitted on {}", row.len(), self.mean.len())));
                }
                for ((v, m), sd) in row.iter_mut().zip(&self.mean).zip(&self.sd) {
                    *v = (*v - m) / sd;
                }
            }
        }
        Ok(())
    }
}

/// Windows concatenated in time order: `K * width` columns.
pub fn design_matrix(samples: &[SequenceSample]) -> Result<DMatrix<f64>> {
    let k = samples.first().map_or(0, SequenceSample::time_step);
    let w = samples.first().map_or(0, SequenceSample::input_dim);
    let mut data = Vec::with_capacity(samples.len() * k * w);
    for s in samples {
        if s.time_step() != k || s.inputs.iter().any(|r| r.len() != w) {
            return Err(Error::Dimension(format!("patient {} has a ragged input", s.patient_id)));
        }
        for row in &s.inputs {
            data.extend_from_slice(row);
        }
    }
    Ok(DMatrix::from_row_slice(samples.len(), k * w, &data))
}

/// Design columns holding effects in an augmented design of `k` windows.
pub fn delta_columns(k: usize, d: usize, width: usize) -> Vec<usize> {
    let stride = d + width + 1;
    (0..k).flat_map(|t| (0..width).map(move |j| t * stride + d + j)).collect()
}

pub fn labels(samples: &[SequenceSample]) -> Vec<f64> {
    samples.iter().map(|s| s.label).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::sequence::augment;
    use crate::synth::PatientTrajectory;
    use crate::treatment::TreatmentVector;

    fn cohort(n_windows: usize, onsets: &[Option<usize>]) -> Cohort {
        let patients = onsets
            .iter()
            .enumerate()
            .map(|(i, onset)| PatientTrajectory {
                patient_id: i as u64,
                labs_observed: (0..n_windows).map(|w| vec![Some(w as f64), Some(i as f64)]).collect(),
                meds: vec![TreatmentVector::zeros(1); n_windows],
                dx: (0..n_windows).map(|w| vec![onset.is_some_and(|o| w >= o)]).collect(),
                truth: None,
            })
            .collect();
        Cohort {
            n_windows,
            n_labs: 2,
            n_digits: 1,
            n_codes: 1,
            patients,
        }
    }

    fn spec(k: usize) -> DatasetSpec {
        DatasetSpec {
            task: Task::Diagnosis,
            outcome: 0,
            time_step: k,
            horizon: 5,
        }
    }

    #[test]
    fn anchor_arithmetic() {
        let c = cohort(60, &[None]);
        let imputed = ImputedLabs::from_cohort(&c).unwrap();
        let s = assemble_dataset(&c, &imputed, &spec(10), None).unwrap();
        assert_eq!(s[0].windows, (45..=54).collect::<Vec<_>>());
        assert_eq!(s[0].inputs[0], vec![45.0, 0.0]);
        assert!(matches!(spec(1).anchor(5), Err(Error::Config(_))));
        assert!(matches!(spec(56).anchor(60), Err(Error::Config(_))));
        assert_eq!(spec(55).anchor(60).unwrap(), 54);
    }

    #[test]
    fn prior_diagnoses_are_excluded_and_labels_read_at_horizon() {
        // onset 52 <= anchor 54: excluded; 59: positive; 58 < 59: positive; none: negative
        let c = cohort(60, &[Some(52), Some(59), Some(58), None, Some(54)]);
        let imputed = ImputedLabs::from_cohort(&c).unwrap();
        let s = assemble_dataset(&c, &imputed, &spec(10), None).unwrap();
        let ids: Vec<u64> = s.iter().map(|x| x.patient_id).collect();
        assert_eq!(ids, vec![1, 2, 3]);
        assert_eq!(labels(&s), vec![1.0, 1.0, 0.0]);
        let only: HashSet<u64> = [2, 3].into();
        assert_eq!(assemble_dataset(&c, &imputed, &spec(10), Some(&only)).unwrap().len(), 2);
        let bad = DatasetSpec { outcome: 3, ..spec(10) };
        assert!(matches!(assemble_dataset(&c, &imputed, &bad, None), Err(Error::Config(_))));
    }

    #[test]
    fn standardisation_and_design_layout() {
        let c = cohort(20, &[None, None]);
        let imputed = ImputedLabs::from_cohort(&c).unwrap();
        let all: HashSet<u64> = [0, 1].into();
        let sc = FeatureScaling::fit(&c, &imputed, None, &all).unwrap();
        assert!((sc.mean[0] - 9.5).abs() < 1e-12 && (sc.mean[1] - 0.5).abs() < 1e-12);
        assert!((sc.sd[1] - 0.5).abs() < 1e-12);
        let spec = DatasetSpec { time_step: 3, horizon: 2, ..spec(3) };
        let mut s = assemble_dataset(&c, &imputed, &spec, None).unwrap();
        sc.standardize(&mut s).unwrap();
        assert_eq!(s[1].inputs[0][1], 1.0);
        let x = design_matrix(&s).unwrap();
        assert_eq!(x.shape(), (2, 6));
        assert_eq!(x[(0, 2)], s[0].inputs[1][0]);
        for smp in &mut s {
            smp.delta_targets = vec![vec![7.0; 3]; 3];
        }
        let aug = augment(&s).unwrap();
        let xa = design_matrix(&aug).unwrap();
        assert_eq!(xa.ncols(), 3 * 6);
        for j in delta_columns(3, 2, 3) {
            assert_eq!(xa[(0, j)], 7.0);
        }
        assert_eq!(delta_columns(2, 2, 1), vec![2, 6]);
    }
}
