use std::fmt;

use serde::{Deserialize, Serialize};

/// Binary medication-combination indicator `M^t`, one digit per medication line.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TreatmentVector(Vec<bool>);

impl TreatmentVector {
    pub fn zeros(m: usize) -> Self {
        TreatmentVector(vec![false; m])
    }

    pub fn from_digits(digits: Vec<bool>) -> Self {
        TreatmentVector(digits)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn set(&mut self, i: usize, on: bool) {
        self.0[i] = on;
    }

    pub fn digits(&self) -> &[bool] {
        &self.0
    }

    pub fn active(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    /// Digits on in `self` but off in `prior`.
    pub fn added_since(&self, prior: &TreatmentVector) -> Vec<usize> {
        self.0
            .iter()
            .zip(&prior.0)
            .enumerate()
            .filter(|(_, (&now, &before))| now && !before)
            .map(|(i, _)| i)
            .collect()
    }

    /// Whether every digit on in `other` is also on in `self`.
    pub fn contains(&self, other: &TreatmentVector) -> bool {
        self.0.iter().zip(&other.0).all(|(&a, &b)| a || !b)
    }

    pub fn to_bits(&self) -> Vec<u8> {
        self.0.iter().map(|&b| b as u8).collect()
    }

    pub fn from_bits(bits: &[u8]) -> Option<Self> {
        bits.iter()
            .map(|&b| match b {
                0 => Some(false),
                1 => Some(true),
                _ => None,
            })
            .collect::<Option<Vec<_>>>()
            .map(TreatmentVector)
    }
}

impl fmt::Display for TreatmentVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn added_digits_and_containment() {
        let before = TreatmentVector::from_bits(&[1, 0, 0]).unwrap();
        let after = TreatmentVector::from_bits(&[1, 1, 0]).unwrap();
        assert_eq!(after.added_since(&before), vec![1]);
        assert!(after.contains(&before));
        assert!(!before.contains(&after));
        assert_eq!(after.to_string(), "110");
        assert!(TreatmentVector::from_bits(&[2]).is_none());
    }
}
