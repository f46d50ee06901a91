//! Cohort files: JSON Lines, one patient per line.
//!
//! ```text
//! {"id":0,"meds":[[0,1,..],..],"labs_observed":[[1.2,null,..],..],"dx":[[0,1,..],..]}
//! ```
//!
//! `meds` is `[window][digit]`, `labs_observed` is `[window][lab]` with `null`
//! for missing cells and `dx` is `[window][code]` (diseases, then outcomes).
//! With ground truth enabled the record also carries `severity`,
//! `labs_true` and `individual_effects`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::simulate::{Cohort, GroundTruth, PatientTrajectory};
use crate::error::{Error, Result};
use crate::treatment::TreatmentVector;

#[derive(Debug, Serialize, Deserialize)]
struct PatientRecord {
    id: u64,
    meds: Vec<Vec<u8>>,
    labs_observed: Vec<Vec<Option<f64>>>,
    dx: Vec<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    severity: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labs_true: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    individual_effects: Option<Vec<Vec<f64>>>,
}

impl PatientRecord {
    fn from_patient(p: &PatientTrajectory, ground_truth: bool) -> Self {
        let truth = p.truth.as_ref().filter(|_| ground_truth);
        PatientRecord {
            id: p.patient_id,
            meds: p.meds.iter().map(TreatmentVector::to_bits).collect(),
            labs_observed: p.labs_observed.clone(),
            dx: p.dx.iter().map(|row| row.iter().map(|&b| b as u8).collect()).collect(),
            severity: truth.map(|t| t.severity.clone()),
            labs_true: truth.map(|t| t.labs_true.clone()),
            individual_effects: truth.map(|t| t.individual_effects.clone()),
        }
    }

    fn into_patient(self, line: usize) -> Result<PatientTrajectory> {
        let bad = |what: &str| Error::Data(format!("cohort line {line}: {what}"));
        let meds = self
            .meds
            .iter()
            .map(|bits| TreatmentVector::from_bits(bits).ok_or_else(|| bad("medication digit not 0/1")))
            .collect::<Result<Vec<_>>>()?;
        let dx = self
            .dx
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&b| match b {
                        0 => Ok(false),
                        1 => Ok(true),
                        _ => Err(bad("diagnosis flag not 0/1")),
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let truth = match (self.severity, self.labs_true, self.individual_effects) {
            (Some(severity), Some(labs_true), Some(individual_effects)) => Some(GroundTruth {
                severity,
                labs_true,
                individual_effects,
            }),
            (None, None, None) => None,
            _ => return Err(bad("partial ground truth")),
        };
        Ok(PatientTrajectory {
            patient_id: self.id,
            labs_observed: self.labs_observed,
            meds,
            dx,
            truth,
        })
    }
}

pub fn write_cohort(cohort: &Cohort, mut out: impl Write, ground_truth: bool) -> Result<()> {
    for p in &cohort.patients {
        serde_json::to_writer(&mut out, &PatientRecord::from_patient(p, ground_truth))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_cohort(cohort: &Cohort, path: impl AsRef<Path>, ground_truth: bool) -> Result<()> {
    write_cohort(cohort, BufWriter::new(File::create(path)?), ground_truth)
}

/// Read a cohort and check that every record has the same shape.
pub fn read_cohort(input: impl BufRead) -> Result<Cohort> {
    let mut patients = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PatientRecord = serde_json::from_str(&line)?;
        patients.push(record.into_patient(i + 1)?);
    }
    let Some(first) = patients.first() else {
        return Ok(Cohort {
            n_windows: 0,
            n_labs: 0,
            n_digits: 0,
            n_codes: 0,
            patients,
        });
    };
    let n_windows = first.meds.len();
    let n_labs = first.labs_observed.first().map_or(0, Vec::len);
    let n_digits = first.meds.first().map_or(0, TreatmentVector::len);
    let n_codes = first.dx.first().map_or(0, Vec::len);
    for p in &patients {
        let ok = p.meds.len() == n_windows
            && p.labs_observed.len() == n_windows
            && p.dx.len() == n_windows
            && p.meds.iter().all(|m| m.len() == n_digits)
            && p.labs_observed.iter().all(|r| r.len() == n_labs)
            && p.dx.iter().all(|r| r.len() == n_codes);
        if !ok {
            return Err(Error::Data(format!("patient {} has an inconsistent shape", p.patient_id)));
        }
    }
    let mut ids: Vec<u64> = patients.iter().map(|p| p.patient_id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Data("duplicate patient id in cohort".into()));
    }
    Ok(Cohort {
        n_windows,
        n_labs,
        n_digits,
        n_codes,
        patients,
    })
}

pub fn load_cohort(path: impl AsRef<Path>) -> Result<Cohort> {
    read_cohort(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{simulate_cohort, SimulationConfig};
    use crate::testutil::two_disease_structure;

    #[test]
    fn round_trip_with_and_without_truth() {
        let s = two_disease_structure();
        let cohort = simulate_cohort(&s, &SimulationConfig { n_patients: 5, ..Default::default() }).unwrap();
        let mut buf = Vec::new();
        write_cohort(&cohort, &mut buf, true).unwrap();
        assert_eq!(read_cohort(buf.as_slice()).unwrap(), cohort);

        let mut bare = Vec::new();
        write_cohort(&cohort, &mut bare, false).unwrap();
        let text = String::from_utf8(bare.clone()).unwrap();
        assert!(!text.contains("labs_true"));
        let back = read_cohort(bare.as_slice()).unwrap();
        assert!(back.patients.iter().all(|p| p.truth.is_none()));
        assert_eq!(back.patients[0].meds, cohort.patients[0].meds);
    }

    #[test]
    fn ragged_records_are_rejected() {
        let text = "{\"id\":0,\"meds\":[[0]],\"labs_observed\":[[1.0]],\"dx\":[[0]]}\n\
                    {\"id\":1,\"meds\":[[0],[1]],\"labs_observed\":[[1.0],[null]],\"dx\":[[0],[1]]}\n";
        assert!(matches!(read_cohort(text.as_bytes()), Err(Error::Data(_))));
    }
}
