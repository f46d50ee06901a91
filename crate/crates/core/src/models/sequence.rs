//! Fixed-length input sequences and effect augmentation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ite::DeltaSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSample {
    pub patient_id: u64,
    /// Cohort window of each input row.
    pub windows: Vec<usize>,
    /// `[K][d]`, fully observed.
    pub inputs: Vec<Vec<f64>>,
    pub label: f64,
    /// `[K][|L|]` effect per input window (zeros when none).
    pub delta_targets: Vec<Vec<f64>>,
    /// `[K]` unmatched-addition flag per input window.
    pub unmatched: Vec<bool>,
}

impl SequenceSample {
    pub fn time_step(&self) -> usize {
        self.inputs.len()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }
}

/// Fill `delta_targets` and `unmatched` from an effect file, dividing each
/// effect column by `scale`.
pub fn attach_deltas(samples: &mut [SequenceSample], deltas: &DeltaSet, scale: &[f64]) -> Result<()> {
    if scale.len() != deltas.width() {
        return Err(Error::Dimension(format!("{} scales for {} effect columns", scale.len(), deltas.width())));
    }
    for s in samples.iter_mut() {
        let seq = deltas.sequence(s.patient_id)?;
        let mut targets = Vec::with_capacity(s.windows.len());
        let mut flags = Vec::with_capacity(s.windows.len());
        for &w in &s.windows {
            let (delta, flag) = seq.get(w).ok_or_else(|| {
                Error::Alignment(format!("patient {} window {w} is beyond the effect file", s.patient_id))
            })?;
            targets.push(delta.iter().zip(scale).map(|(d, sc)| d / sc).collect());
            flags.push(*flag);
        }
        s.delta_targets = targets;
        s.unmatched = flags;
    }
    Ok(())
}

/// `[x, delta, unmatched]` per window: width `d + |L| + 1`.
pub fn augment(samples: &[SequenceSample]) -> Result<Vec<SequenceSample>> {
    samples
        .iter()
        .map(|s| {
            let k = s.inputs.len();
            if s.delta_targets.len() != k || s.unmatched.len() != k {
                return Err(Error::Alignment(format!(
                    "patient {}: {} input windows but {} effect windows",
                    s.patient_id,
                    k,
                    s.delta_targets.len()
                )));
            }
            let mut out = s.clone();
            for (t, row) in out.inputs.iter_mut().enumerate() {
                row.extend_from_slice(&s.delta_targets[t]);
                row.push(if s.unmatched[t] { 1.0 } else { 0.0 });
            }
            Ok(out)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn sample(d: usize, l: usize) -> SequenceSample {
        SequenceSample {
            patient_id: 1,
            windows: vec![3, 4],
            inputs: vec![vec![1.0; d]; 2],
            label: 0.0,
            delta_targets: vec![vec![0.0; l]; 2],
            unmatched: vec![false; 2],
        }
    }

    #[test]
    fn zero_effects_append_zero_columns() {
        let out = augment(&[sample(11, 3)]).unwrap();
        assert_eq!(out[0].input_dim(), 15);
        assert!(out[0].inputs.iter().all(|r| r[11..].iter().all(|&v| v == 0.0)));
        assert_eq!(&out[0].inputs[0][..11], &[1.0; 11]);
    }

    #[test]
    fn effects_are_aligned_by_window() {
        let mut records = BTreeMap::new();
        records.insert(
            (1, 4),
            crate::ite::DeltaRecord {
                patient_id: 1,
                window: 4,
                delta: vec![2.0],
                unmatched: false,
                control: None,
            },
        );
        let set = DeltaSet {
            relevant_labs: vec![0],
            n_windows: 6,
            patient_ids: vec![1],
            records,
        };
        let mut s = vec![sample(2, 1)];
        attach_deltas(&mut s, &set, &[4.0]).unwrap();
        assert_eq!(s[0].delta_targets, vec![vec![0.0], vec![0.5]]);
        let mut stranger = vec![SequenceSample { patient_id: 9, ..sample(2, 1) }];
        assert!(matches!(attach_deltas(&mut stranger, &set, &[1.0]), Err(Error::Alignment(_))));
        let mut ragged = sample(2, 1);
        ragged.delta_targets.pop();
        assert!(matches!(augment(&[ragged]), Err(Error::Alignment(_))));
    }
}
