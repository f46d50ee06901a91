mod common;

use std::collections::HashSet;

use proptest::prelude::*;

use deltaguide::harness::report::{write_pvalues, write_results};
use deltaguide::harness::{
    assemble_dataset, run_experiment, run_grid, split_patients, Cell, DatasetSpec, ExperimentConfig,
    ExperimentSettings, FeatureScaling, GridReport, GridSpec, ImputationStats, ImputedLabs, Method, ModelKind,
    PValueRecord, Task,
};
use deltaguide::ite::{build_delta_sequences, IteConfig};
use deltaguide::synth::Cohort;
use deltaguide::Error;

const OUTCOME: usize = 2;

fn settings() -> ExperimentSettings {
    ExperimentSettings {
        horizon: 3,
        runs: 2,
        base_seed: 4,
        ..ExperimentSettings::default()
    }
}

fn cell(model: ModelKind, method: Method) -> Cell {
    Cell {
        outcome: OUTCOME,
        model,
        method,
        time_step: 5,
    }
}

fn poisoned(cohort: &Cohort, test: &HashSet<u64>) -> Cohort {
    let mut out = cohort.clone();
    for p in out.patients.iter_mut().filter(|p| test.contains(&p.patient_id)) {
        for row in &mut p.labs_observed {
            for v in row.iter_mut().flatten() {
                *v = *v * 50.0 + 1000.0;
            }
        }
    }
    out
}

#[test]
fn training_statistics_ignore_test_patients() {
    let s = common::small_structure();
    let cohort = common::small_cohort(400, 3);
    let (train, test) = split_patients(&cohort, 0.8, 9).unwrap();
    assert!(train.is_disjoint(&test));
    let bad = poisoned(&cohort, &test);

    let fit = |c: &Cohort| {
        let stats = ImputationStats::fit(c.patients.iter().filter(|p| train.contains(&p.patient_id)), c.n_labs).unwrap();
        let imputed = ImputedLabs::new(c, &stats);
        let est = build_delta_sequences(c, &imputed, &IteConfig::default(), Some(&s), Some(&train)).unwrap();
        let scaling = FeatureScaling::fit(c, &imputed, Some(&est.deltas), &train).unwrap();
        (stats, scaling, est)
    };
    let (stats_a, scaling_a, est_a) = fit(&cohort);
    let (stats_b, scaling_b, est_b) = fit(&bad);
    assert_eq!(stats_a, stats_b);
    assert_eq!(scaling_a.mean, scaling_b.mean);
    assert_eq!(scaling_a.sd, scaling_b.sd);

    // identical propensity models give identical gaps for train-only pairs
    let mut compared = 0;
    for a in est_a.matches.iter().filter(|m| train.contains(&m.treated.patient_id)) {
        if let Some(b) = est_b.matches.iter().find(|b| b.treated == a.treated) {
            if a.control == b.control && train.contains(&a.control.patient_id) {
                assert_eq!(a.propensity_gap, b.propensity_gap);
                compared += 1;
            }
        }
    }
    assert!(compared > 20, "only {compared} comparable pairs");

    // the same comparison without the restriction does see the poison
    let leaky = |c: &Cohort| {
        let imputed = ImputedLabs::from_cohort(c).unwrap();
        build_delta_sequences(c, &imputed, &IteConfig::default(), Some(&s), None).unwrap()
    };
    let (la, lb) = (leaky(&cohort), leaky(&bad));
    let differs = la.matches.iter().filter(|a| train.contains(&a.treated.patient_id)).any(|a| {
        lb.matches
            .iter()
            .find(|b| b.treated == a.treated)
            .map_or(true, |b| (b.control, b.propensity_gap) != (a.control, a.propensity_gap))
    });
    assert!(differs);
}

#[test]
fn assembled_prevalence_is_below_raw_prevalence() {
    let cohort = common::small_cohort(600, 8);
    let imputed = ImputedLabs::from_cohort(&cohort).unwrap();
    let spec = DatasetSpec {
        task: Task::Diagnosis,
        outcome: OUTCOME,
        time_step: 5,
        horizon: 3,
    };
    let samples = assemble_dataset(&cohort, &imputed, &spec, None).unwrap();
    let target = cohort.n_windows - 1;
    let raw = cohort.patients.iter().filter(|p| p.dx[target][OUTCOME]).count() as f64 / cohort.patients.len() as f64;
    let assembled = samples.iter().filter(|s| s.label == 1.0).count() as f64 / samples.len() as f64;
    assert!(raw > 0.0);
    assert!(assembled < raw, "{assembled} vs {raw}");
}

#[test]
fn constant_model_scores_one_half() {
    let cohort = common::small_cohort(300, 1);
    let config = ExperimentConfig {
        cell: cell(ModelKind::Constant, Method::None),
        settings: settings(),
    };
    let row = run_experiment(&config, &cohort, None, Some(&common::small_structure())).unwrap();
    assert_eq!(row.metric_name, "AUC");
    assert_eq!(row.runs, vec![Some(0.5), Some(0.5)]);
    assert_eq!(row.mean, Some(0.5));
}

#[test]
fn experiments_are_deterministic_and_means_are_arithmetic() {
    let cohort = common::small_cohort(300, 2);
    let s = common::small_structure();
    let config = ExperimentConfig {
        cell: cell(ModelKind::Glm, Method::Augment),
        settings: settings(),
    };
    let a = run_experiment(&config, &cohort, None, Some(&s)).unwrap();
    let b = run_experiment(&config, &cohort, None, Some(&s)).unwrap();
    assert_eq!(a, b);
    let valid: Vec<f64> = a.runs.iter().flatten().copied().collect();
    assert_eq!(a.mean, Some(valid.iter().sum::<f64>() / valid.len() as f64));
    assert!(valid.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn outcome_without_positives_invalidates_every_run() {
    let mut cohort = common::small_cohort(200, 6);
    for p in &mut cohort.patients {
        for row in &mut p.dx {
            row[OUTCOME] = false;
        }
    }
    let config = ExperimentConfig {
        cell: cell(ModelKind::Glm, Method::None),
        settings: settings(),
    };
    let err = run_experiment(&config, &cohort, None, None).unwrap_err();
    assert!(matches!(err, Error::AllRunsInvalid(_)), "{err}");
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn grid_records_failures_and_keeps_going() {
    let cohort = common::small_cohort(250, 3);
    let spec = GridSpec {
        outcomes: vec![OUTCOME],
        models: vec![ModelKind::Constant, ModelKind::Glm],
        methods: vec![Method::None, Method::Augment],
        time_steps: vec![4, 30],
        model_methods: Default::default(),
        structure: None,
        settings: settings(),
    };
    let err = run_grid(&spec, &cohort, None, None, &|_| {}).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "time step beyond the horizon is a configuration error");

    let spec = GridSpec {
        time_steps: vec![10],
        ..spec
    };
    let report = run_grid(&spec, &cohort, None, None, &|_| {}).unwrap();
    assert_eq!(report.rows.len(), 4);
    assert!(report.rows.iter().all(|r| r.error.is_none()));
    assert!(!report.pvalues.is_empty());
    assert!(report.pvalues.iter().all(|r| r.cell.model == ModelKind::Glm && r.cell.method == Method::Augment));

    let empty = GridSpec {
        outcomes: vec![],
        ..spec
    };
    let report = run_grid(&empty, &cohort, None, None, &|_| {}).unwrap();
    assert!(report.rows.is_empty());
    let mut buf = Vec::new();
    write_results(&report, &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1);
}

proptest! {
    #[test]
    fn pvalue_summary_is_ordered_and_bounded(
        groups in prop::collection::vec((1usize..40, prop::collection::vec(0.0f64..=1.0, 1..60)), 1..6)
    ) {
        let report = GridReport {
            task: Some(Task::Diagnosis),
            rows: Vec::new(),
            pvalues: groups
                .iter()
                .map(|(k, p)| PValueRecord { cell: Cell { time_step: *k, ..cell(ModelKind::Glm, Method::Augment) }, run: 0, pvalues: p.clone() })
                .collect(),
        };
        let mut buf = Vec::new();
        write_pvalues(&report, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        for line in text.lines().skip(1) {
            let fields: Vec<&str> = line.split(',').collect();
            let q: Vec<f64> = fields[2..7].iter().map(|v| v.parse().unwrap()).collect();
            prop_assert!(q.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!(q.windows(2).all(|w| w[0] <= w[1]));
            let frac: f64 = fields[7].parse().unwrap();
            prop_assert!((0.0..=1.0).contains(&frac));
        }
    }
}
