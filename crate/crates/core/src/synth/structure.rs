//! Causal structure: diseases with parent links, labs driven by disease
//! severity, escalation ladders of medication lines, and late-onset outcomes.
//!
//! The structure is stored on disk as a declarative JSON document that refers
//! to diseases and labs by string id. [`CausalStructure::from_document`]
//! resolves those references into indices and checks every invariant, so a
//! `CausalStructure` value is always valid.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum number of medication lines on one disease's escalation ladder.
pub const MAX_LINES: usize = 3;

/// Weighted reference to a disease inside the structure document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiseaseLink {
    pub disease: String,
    pub weight: f64,
}

/// Natural progression `s_t = persistence * s_{t-1} + sum_p w_p * s_p,{t-1} + drift + noise`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progression {
    pub persistence: f64,
    #[serde(default)]
    pub drift: f64,
    #[serde(default)]
    pub noise_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedicationLine {
    /// Population-level severity effect `k` windows after the line started,
    /// stored at index `k - 1`. Zero past the end of the schedule.
    pub effect_schedule: Vec<f64>,
}

impl MedicationLine {
    /// Population effect `elapsed` windows after the line started (`elapsed >= 1`).
    pub fn population_effect(&self, elapsed: usize) -> f64 {
        if elapsed == 0 {
            return 0.0;
        }
        self.effect_schedule.get(elapsed - 1).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiseaseDoc {
    pub id: String,
    #[serde(default)]
    pub parents: Vec<DiseaseLink>,
    pub progression: Progression,
    /// Scale applied to the mean parent severity when drawing the initial
    /// severity of a child disease.
    #[serde(default = "default_parent_scale")]
    pub init_parent_scale: f64,
    pub lines: Vec<MedicationLine>,
    pub diagnostic_lab: String,
    pub threshold: f64,
}

fn default_parent_scale() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabDoc {
    pub id: String,
    pub baseline: f64,
    pub weights: Vec<DiseaseLink>,
    /// Constant per-window change added to the severity image.
    #[serde(default)]
    pub offset: f64,
    /// Lower bound on the noiseless lab value, if any.
    #[serde(default)]
    pub floor: Option<f64>,
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub units: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeDoc {
    pub id: String,
    pub parents: Vec<DiseaseLink>,
    pub threshold: f64,
    /// Steepness of the per-window onset hazard `sigmoid(slope * (score - threshold))`.
    pub slope: f64,
    /// Window before which the outcome cannot be diagnosed. Defaults to half the horizon.
    #[serde(default)]
    pub earliest_onset: Option<usize>,
}

/// On-disk form of a causal structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureDocument {
    pub n_windows: usize,
    #[serde(default = "default_window_length")]
    pub window_length_years: f64,
    pub diseases: Vec<DiseaseDoc>,
    pub labs: Vec<LabDoc>,
    pub outcomes: Vec<OutcomeDoc>,
}

fn default_window_length() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq)]
pub struct Disease {
    pub id: String,
    pub parents: Vec<(usize, f64)>,
    pub persistence: f64,
    pub drift: f64,
    pub noise_std: f64,
    pub init_parent_scale: f64,
    pub lines: Vec<MedicationLine>,
    pub diagnostic_lab: usize,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lab {
    pub id: String,
    pub baseline: f64,
    pub weights: Vec<(usize, f64)>,
    pub offset: f64,
    pub floor: Option<f64>,
    pub noise_std: f64,
    pub units: String,
}

impl Lab {
    /// Per-window change `G_l(S)` given the severity vector.
    pub fn increment(&self, severity: &[f64]) -> f64 {
        self.weights.iter().map(|&(d, w)| w * severity[d]).sum::<f64>() + self.offset
    }

    pub fn weight_on(&self, disease: usize) -> f64 {
        self.weights
            .iter()
            .filter(|(d, _)| *d == disease)
            .map(|(_, w)| *w)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub id: String,
    pub parents: Vec<(usize, f64)>,
    pub threshold: f64,
    pub slope: f64,
    pub earliest_onset: usize,
}

impl Outcome {
    pub fn score(&self, severity: &[f64]) -> f64 {
        self.parents.iter().map(|&(d, w)| w * severity[d]).sum()
    }

    /// Onset probability in one window, before the earliest-onset gate.
    pub fn hazard(&self, severity: &[f64]) -> f64 {
        let z = self.slope * (self.score(severity) - self.threshold);
        1.0 / (1.0 + (-z).exp())
    }
}

/// Validated causal structure with resolved indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalStructure {
    pub n_windows: usize,
    pub window_length_years: f64,
    pub diseases: Vec<Disease>,
    pub labs: Vec<Lab>,
    pub outcomes: Vec<Outcome>,
    line_offsets: Vec<usize>,
    topo_order: Vec<usize>,
}

impl CausalStructure {
    pub fn from_document(doc: &StructureDocument) -> Result<Self> {
        if doc.diseases.is_empty() {
            return Err(Error::EmptyStructure);
        }
        if doc.n_windows < 2 {
            return Err(Error::Structure(format!(
                "need at least 2 windows, got {}",
                doc.n_windows
            )));
        }
        let disease_index = index_ids(doc.diseases.iter().map(|d| d.id.as_str()), "disease")?;
        let lab_index = index_ids(doc.labs.iter().map(|l| l.id.as_str()), "lab")?;
        index_ids(doc.outcomes.iter().map(|o| o.id.as_str()), "outcome")?;

        let resolve = |links: &[DiseaseLink], owner: &str| -> Result<Vec<(usize, f64)>> {
            links
                .iter()
                .map(|link| {
                    let idx = disease_index.get(link.disease.as_str()).ok_or_else(|| {
                        Error::Reference(format!("{owner} refers to unknown disease '{}'", link.disease))
                    })?;
                    if !link.weight.is_finite() {
                        return Err(Error::Structure(format!("{owner}: non-finite weight")));
                    }
                    Ok((*idx, link.weight))
                })
                .collect()
        };

        let mut diseases = Vec::with_capacity(doc.diseases.len());
        for d in &doc.diseases {
            let parents = resolve(&d.parents, &d.id)?;
            if d.lines.is_empty() || d.lines.len() > MAX_LINES {
                return Err(Error::Structure(format!(
                    "disease '{}' has {} medication lines, expected 1..={MAX_LINES}",
                    d.id,
                    d.lines.len()
                )));
            }
            let diagnostic_lab = *lab_index.get(d.diagnostic_lab.as_str()).ok_or_else(|| {
                Error::Reference(format!("disease '{}' diagnosed by unknown lab '{}'", d.id, d.diagnostic_lab))
            })?;
            let p = &d.progression;
            if ![p.persistence, p.drift, p.noise_std, d.threshold, d.init_parent_scale]
                .iter()
                .all(|v| v.is_finite())
                || p.noise_std < 0.0
            {
                return Err(Error::Structure(format!("disease '{}' has invalid parameters", d.id)));
            }
            diseases.push(Disease {
                id: d.id.clone(),
                parents,
                persistence: p.persistence,
                drift: p.drift,
                noise_std: p.noise_std,
                init_parent_scale: d.init_parent_scale,
                lines: d.lines.clone(),
                diagnostic_lab,
                threshold: d.threshold,
            });
        }

        let mut labs = Vec::with_capacity(doc.labs.len());
        for l in &doc.labs {
            let weights = resolve(&l.weights, &l.id)?;
            if weights.is_empty() {
                return Err(Error::Structure(format!("lab '{}' maps to no disease", l.id)));
            }
            if !l.baseline.is_finite() || !l.offset.is_finite() || !(l.noise_std >= 0.0) {
                return Err(Error::Structure(format!("lab '{}' has invalid parameters", l.id)));
            }
            labs.push(Lab {
                id: l.id.clone(),
                baseline: l.baseline,
                weights,
                offset: l.offset,
                floor: l.floor,
                noise_std: l.noise_std,
                units: l.units.clone(),
            });
        }

        let mut outcomes = Vec::with_capacity(doc.outcomes.len());
        for o in &doc.outcomes {
            let parents = resolve(&o.parents, &o.id)?;
            if parents.is_empty() {
                return Err(Error::Structure(format!("outcome '{}' has no parent disease", o.id)));
            }
            if !o.threshold.is_finite() || !o.slope.is_finite() {
                return Err(Error::Structure(format!("outcome '{}' has invalid parameters", o.id)));
            }
            outcomes.push(Outcome {
                id: o.id.clone(),
                parents,
                threshold: o.threshold,
                slope: o.slope,
                earliest_onset: o.earliest_onset.unwrap_or(doc.n_windows / 2),
            });
        }

        let topo_order = topological_order(&diseases)?;
        let mut line_offsets = Vec::with_capacity(diseases.len());
        let mut next = 0;
        for d in &diseases {
            line_offsets.push(next);
            next += d.lines.len();
        }

        Ok(CausalStructure {
            n_windows: doc.n_windows,
            window_length_years: doc.window_length_years,
            diseases,
            labs,
            outcomes,
            line_offsets,
            topo_order,
        })
    }

    pub fn to_document(&self) -> StructureDocument {
        let link = |links: &[(usize, f64)]| {
            links
                .iter()
                .map(|&(d, w)| DiseaseLink {
                    disease: self.diseases[d].id.clone(),
                    weight: w,
                })
                .collect::<Vec<_>>()
        };
        StructureDocument {
            n_windows: self.n_windows,
            window_length_years: self.window_length_years,
            diseases: self
                .diseases
                .iter()
                .map(|d| DiseaseDoc {
                    id: d.id.clone(),
                    parents: link(&d.parents),
                    progression: Progression {
                        persistence: d.persistence,
                        drift: d.drift,
                        noise_std: d.noise_std,
                    },
                    init_parent_scale: d.init_parent_scale,
                    lines: d.lines.clone(),
                    diagnostic_lab: self.labs[d.diagnostic_lab].id.clone(),
                    threshold: d.threshold,
                })
                .collect(),
            labs: self
                .labs
                .iter()
                .map(|l| LabDoc {
                    id: l.id.clone(),
                    baseline: l.baseline,
                    weights: link(&l.weights),
                    offset: l.offset,
                    floor: l.floor,
                    noise_std: l.noise_std,
                    units: l.units.clone(),
                })
                .collect(),
            outcomes: self
                .outcomes
                .iter()
                .map(|o| OutcomeDoc {
                    id: o.id.clone(),
                    parents: link(&o.parents),
                    threshold: o.threshold,
                    slope: o.slope,
                    earliest_onset: Some(o.earliest_onset),
                })
                .collect(),
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let doc: StructureDocument = serde_json::from_str(text)?;
        Self::from_document(&doc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_document())?;
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Total number of treatment digits `m` (one per medication line).
    pub fn n_digits(&self) -> usize {
        self.diseases.iter().map(|d| d.lines.len()).sum()
    }

    /// Digit index of line `line` (0-based) of disease `disease`.
    pub fn digit(&self, disease: usize, line: usize) -> usize {
        self.line_offsets[disease] + line
    }

    /// Inverse of [`digit`](Self::digit).
    pub fn digit_owner(&self, digit: usize) -> (usize, usize) {
        let disease = match self.line_offsets.binary_search(&digit) {
            Ok(mut i) => {
                // zero-line diseases cannot exist, but offsets may still repeat in principle
                while i + 1 < self.line_offsets.len() && self.line_offsets[i + 1] == digit {
                    i += 1;
                }
                i
            }
            Err(i) => i - 1,
        };
        (disease, digit - self.line_offsets[disease])
    }

    /// Diseases ordered so that every parent precedes its children.
    pub fn topological_order(&self) -> &[usize] {
        &self.topo_order
    }

    /// Number of diagnosis codes: diseases followed by outcomes.
    pub fn n_codes(&self) -> usize {
        self.diseases.len() + self.outcomes.len()
    }

    /// Labs with a non-zero weight on `disease`.
    pub fn labs_of_disease(&self, disease: usize) -> Vec<usize> {
        self.labs
            .iter()
            .enumerate()
            .filter(|(_, l)| l.weight_on(disease) != 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    /// Diseases that are ancestors (inclusive) of at least one outcome.
    pub fn outcome_ancestors(&self) -> Vec<bool> {
        let mut marked = vec![false; self.diseases.len()];
        let mut stack: Vec<usize> = self
            .outcomes
            .iter()
            .flat_map(|o| o.parents.iter().map(|&(d, _)| d))
            .collect();
        while let Some(d) = stack.pop() {
            if !marked[d] {
                marked[d] = true;
                stack.extend(self.diseases[d].parents.iter().map(|&(p, _)| p));
            }
        }
        marked
    }

    /// Number of parent-to-child edges between diseases.
    pub fn n_disease_edges(&self) -> usize {
        self.diseases.iter().map(|d| d.parents.len()).sum()
    }
}

fn index_ids<'a>(ids: impl Iterator<Item = &'a str>, kind: &str) -> Result<HashMap<&'a str, usize>> {
    let mut map = HashMap::new();
    for (i, id) in ids.enumerate() {
        if map.insert(id, i).is_some() {
            return Err(Error::Structure(format!("duplicate {kind} id '{id}'")));
        }
    }
    Ok(map)
}

fn topological_order(diseases: &[Disease]) -> Result<Vec<usize>> {
    // Kahn's algorithm; smallest ready index first for a stable order.
    let n = diseases.len();
    let mut indegree = vec![0usize; n];
    let mut children = vec![Vec::new(); n];
    for (child, d) in diseases.iter().enumerate() {
        for &(p, _) in &d.parents {
            indegree[child] += 1;
            children[p].push(child);
        }
    }
    let mut ready: std::collections::BTreeSet<usize> =
        (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(&next) = ready.iter().next() {
        ready.remove(&next);
        order.push(next);
        for &c in &children[next] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.insert(c);
            }
        }
    }
    if order.len() != n {
        let stuck: Vec<&str> = (0..n)
            .filter(|&i| indegree[i] > 0)
            .map(|i| diseases[i].id.as_str())
            .collect();
        return Err(Error::Structure(format!(
            "disease parent links contain a cycle through {stuck:?}"
        )));
    }
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::two_disease_doc;

    #[test]
    fn figure_shaped_structure_has_one_edge() {
        let s = CausalStructure::from_document(&two_disease_doc()).unwrap();
        assert_eq!(s.n_disease_edges(), 1);
        assert_eq!(s.n_digits(), 3);
        assert_eq!(s.digit(1, 1), 2);
        assert_eq!(s.digit_owner(2), (1, 1));
        assert_eq!(s.digit_owner(0), (0, 0));
        assert_eq!(s.outcomes[0].earliest_onset, 5);
        assert_eq!(s.topological_order(), &[0, 1]);
        assert_eq!(s.outcome_ancestors(), vec![true, true]);
    }

    #[test]
    fn cycle_is_rejected() {
        let mut doc = two_disease_doc();
        doc.diseases[0].parents.push(DiseaseLink {
            disease: "disease2".into(),
            weight: 0.1,
        });
        assert!(matches!(CausalStructure::from_document(&doc), Err(Error::Structure(_))));
    }

    #[test]
    fn unknown_lab_reference_is_rejected() {
        let mut doc = two_disease_doc();
        doc.labs[1].weights[0].disease = "disease9".into();
        assert!(matches!(CausalStructure::from_document(&doc), Err(Error::Reference(_))));
    }

    #[test]
    fn empty_structure_is_rejected() {
        let mut doc = two_disease_doc();
        doc.diseases.clear();
        assert!(matches!(CausalStructure::from_document(&doc), Err(Error::EmptyStructure)));
    }

    #[test]
    fn ladder_length_is_bounded() {
        let mut doc = two_disease_doc();
        doc.diseases[0].lines = vec![];
        assert!(CausalStructure::from_document(&doc).is_err());
        doc.diseases[0].lines = vec![MedicationLine { effect_schedule: vec![] }; 4];
        assert!(CausalStructure::from_document(&doc).is_err());
    }

    #[test]
    fn outcome_without_parents_is_rejected() {
        let mut doc = two_disease_doc();
        doc.outcomes[0].parents.clear();
        assert!(CausalStructure::from_document(&doc).is_err());
    }

    #[test]
    fn document_round_trip() {
        let s = CausalStructure::from_document(&two_disease_doc()).unwrap();
        let again = CausalStructure::from_document(&s.to_document()).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn schedule_is_indexed_by_elapsed_windows() {
        let line = MedicationLine {
            effect_schedule: vec![-0.3, -0.2],
        };
        assert_eq!(line.population_effect(0), 0.0);
        assert_eq!(line.population_effect(1), -0.3);
        assert_eq!(line.population_effect(2), -0.2);
        assert_eq!(line.population_effect(3), 0.0);
    }
}
