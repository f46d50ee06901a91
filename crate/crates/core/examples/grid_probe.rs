//! Run a small experiment grid on a random experiment-scale cohort and print
//! the mean metric per cell with timings.
//!
//! `cargo run --release --example grid_probe -- [seed] [models] [time_steps]`
//! with comma-separated lists, e.g. `1 glm,lstm 10,30`.
//!
//! Environment overrides: `EFFECT` (structure effect scale, default 1.0),
//! `SIGMA` (individual effect sigma, default 0.25) and `GRID` (a JSON grid
//! spec merged before the models and time steps above are applied).

use std::time::Instant;

use deltaguide::harness::{run_grid, GridSpec, Method, ModelKind};
use deltaguide::synth::{random_structure, simulate_cohort, RandomStructureParams, SimulationConfig};

fn main() -> deltaguide::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let models: Vec<ModelKind> = args
        .get(2)
        .map(|s| s.split(',').map(|m| serde_json::from_str(&format!("\"{m}\"")).expect("model")).collect())
        .unwrap_or_else(|| vec![ModelKind::Glm]);
    let steps: Vec<usize> = args
        .get(3)
        .map(|s| s.split(',').map(|k| k.parse().expect("time step")).collect())
        .unwrap_or_else(|| vec![10, 20, 30]);
    let start = Instant::now();
    let structure = random_structure(&RandomStructureParams {
        seed,
        effect_scale: std::env::var("EFFECT").ok().and_then(|v| v.parse().ok()).unwrap_or(1.0),
        ..Default::default()
    })?;
    let cohort = simulate_cohort(&structure, &SimulationConfig {
            n_patients: 2000,
            rng_seed: seed,
            individual_effect_sigma: std::env::var("SIGMA").ok().and_then(|v| v.parse().ok()).unwrap_or(0.25),
            ..Default::default()
        })?;
    eprintln!("simulated in {:.1}s", start.elapsed().as_secs_f64());
    let t = Instant::now();
    let imputed = deltaguide::harness::ImputedLabs::from_cohort(&cohort)?;
    let est = deltaguide::ite::build_delta_sequences(&cohort, &imputed, &Default::default(), Some(&structure), None)?;
    eprintln!(
        "effects in {:.1}s: {} labs, {} matched records",
        t.elapsed().as_secs_f64(),
        est.deltas.width(),
        est.deltas.n_matched()
    );
    let n_d = structure.diseases.len();
    let mut spec: GridSpec = serde_json::from_str(&std::env::var("GRID").unwrap_or_else(|_| "{}".into()))?;
    spec.outcomes = (n_d..n_d + structure.outcomes.len()).collect();
    spec.models = models;
    if spec.methods.is_empty() {
        spec.methods = vec![Method::None, Method::Augment];
    }
    spec.model_methods.insert(ModelKind::Lstm, vec![Method::None, Method::Pretrain]);
    spec.model_methods.insert(ModelKind::Gru, vec![Method::None, Method::Pretrain]);
    spec.time_steps = steps;
    spec.settings.base_seed = seed;
    let t = Instant::now();
    let report = run_grid(&spec, &cohort, None, Some(&structure), &|m| eprintln!("{m}"))?;
    eprintln!("grid in {:.1}s", t.elapsed().as_secs_f64());
    for row in &report.rows {
        println!(
            "{} {:>5} {:>8} K={:>2} mean={:.4} runs={:?}",
            row.outcome_label(),
            row.cell.model.name(),
            row.cell.method.name(),
            row.cell.time_step,
            row.mean.unwrap_or(f64::NAN),
            row.runs
        );
    }
    for (k, p) in report.pvalues_by_time_step() {
        let frac = p.iter().filter(|&&v| v < 0.05).count() as f64 / p.len() as f64;
        println!("K={k} pvalues n={} frac<0.05={frac:.3}", p.len());
    }
    Ok(())
}
