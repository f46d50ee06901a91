use std::path::Path;
use std::process::{Command, Output};

const STRUCTURE: &str = r#"{
  "n_windows": 20,
  "diseases": [
    {"id": "d1", "progression": {"persistence": 1.0, "drift": 0.15, "noise_std": 0.05},
     "lines": [{"effect_schedule": [-0.2, -0.1]}, {"effect_schedule": [-0.3]}],
     "diagnostic_lab": "a", "threshold": 12.0},
    {"id": "d2", "parents": [{"disease": "d1", "weight": 0.05}],
     "progression": {"persistence": 1.0, "drift": 0.05, "noise_std": 0.05},
     "lines": [{"effect_schedule": [-0.2]}],
     "diagnostic_lab": "b", "threshold": 6.0}
  ],
  "labs": [
    {"id": "a", "baseline": 1.0, "weights": [{"disease": "d1", "weight": 1.0}], "noise_std": 0.2},
    {"id": "b", "baseline": 1.0, "weights": [{"disease": "d2", "weight": 1.0}], "noise_std": 0.2},
    {"id": "c", "baseline": 0.0, "weights": [{"disease": "d1", "weight": 0.3}, {"disease": "d2", "weight": 0.3}], "noise_std": 0.2}
  ],
  "outcomes": [
    {"id": "y", "parents": [{"disease": "d1", "weight": 0.5}, {"disease": "d2", "weight": 1.0}], "threshold": OUTCOME_THRESHOLD, "slope": 1.0}
  ]
}"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deltaguide"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_structure(dir: &Path, name: &str, threshold: f64) {
    std::fs::write(dir.join(name), STRUCTURE.replace("OUTCOME_THRESHOLD", &format!("{threshold:?}"))).unwrap();
}

fn simulate(dir: &Path, structure: &str, out: &str) {
    ok(dir, &["simulate", "--structure", structure, "--patients", "400", "--seed", "3", "--out", out]);
}

#[test]
fn full_pipeline_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_structure(dir, "s.json", 5.0);
    ok(dir, &["validate-structure", "s.json"]);
    simulate(dir, "s.json", "c.jsonl");
    ok(
        dir,
        &["estimate-ite", "--cohort", "c.jsonl", "--structure", "s.json", "--out", "d.jsonl", "--report", "ite.csv"],
    );
    let report = std::fs::read_to_string(dir.join("ite.csv")).unwrap();
    assert!(report.starts_with("pair,treated_count,match_rate,mean_gap"));
    assert!(report.lines().count() > 1, "{report}");

    ok(
        dir,
        &[
            "train", "--model", "glm", "--method", "augment", "--time-step", "5", "--outcome", "2", "--cohort",
            "c.jsonl", "--deltas", "d.jsonl", "--delta-source", "file", "--out", "m.ckpt", "--metrics", "m.json",
        ],
    );
    let metrics: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("m.json")).unwrap()).unwrap();
    let auc = metrics["metric"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&auc), "{auc}");
    assert_eq!(metrics["metric_name"], "AUC");
    assert!(dir.join("m.ckpt").exists());

    std::fs::write(
        dir.join("grid.json"),
        r#"{"outcomes": [2], "models": ["glm"], "methods": ["none", "augment"], "time_steps": [5],
            "runs": 2, "horizon": 5, "structure": "s.json"}"#,
    )
    .unwrap();
    ok(
        dir,
        &["report", "--grid", "grid.json", "--cohort", "c.jsonl", "--out", "r.csv", "--pvalues", "p.csv", "--series", "t.csv"],
    );
    let table = std::fs::read_to_string(dir.join("r.csv")).unwrap();
    // header, then two runs and a mean row per cell
    assert_eq!(table.lines().count(), 7, "{table}");
    assert!(dir.join("p.csv").exists() && dir.join("t.csv").exists());
}

#[test]
fn generated_structure_validates() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["generate-structure", "--seed", "4", "--out", "g.json"]);
    ok(tmp.path(), &["validate-structure", "g.json"]);
}

#[test]
fn configuration_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_structure(dir, "s.json", 5.0);
    simulate(dir, "s.json", "c.jsonl");
    let out = run(
        dir,
        &["train", "--model", "glm", "--method", "pretrain", "--time-step", "5", "--outcome", "2", "--cohort", "c.jsonl", "--out", "m.ckpt"],
    );
    assert_eq!(out.status.code(), Some(2));
    // horizon plus time step longer than the record
    let out = run(
        dir,
        &["train", "--model", "glm", "--time-step", "18", "--outcome", "2", "--cohort", "c.jsonl", "--out", "m.ckpt"],
    );
    assert_eq!(out.status.code(), Some(2));
    let out = run(dir, &["estimate-ite", "--cohort", "c.jsonl", "--caliper", "-1", "--out", "d.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unreadable_input_exits_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("bad.jsonl"), "not json\n").unwrap();
    let out = run(dir, &["estimate-ite", "--cohort", "bad.jsonl", "--out", "d.jsonl"]);
    assert_eq!(out.status.code(), Some(3));
    let out = run(dir, &["estimate-ite", "--cohort", "missing.jsonl", "--out", "d.jsonl"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn grid_without_positives_exits_with_four() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_structure(dir, "s.json", 1.0e6);
    simulate(dir, "s.json", "c.jsonl");
    std::fs::write(
        dir.join("grid.json"),
        r#"{"outcomes": [2], "models": ["glm"], "methods": ["none"], "time_steps": [5], "runs": 2, "horizon": 5}"#,
    )
    .unwrap();
    let out = run(dir, &["report", "--grid", "grid.json", "--cohort", "c.jsonl", "--out", "r.csv"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}
