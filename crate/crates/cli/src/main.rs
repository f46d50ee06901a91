//! Command line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use deltaguide::harness::report::{save_pvalues, save_results, save_series};
use deltaguide::harness::{
    run_grid, train_model, Cell, DeltaSource, ExperimentConfig, ExperimentSettings, FittedModel, GridSpec,
    ImputedLabs, Method, ModelKind, Task,
};
use deltaguide::ite::{build_delta_sequences, load_deltas, save_deltas, save_match_report, Caliper, IteConfig, RelevantLabs};
use deltaguide::models::checkpoint::Checkpoint;
use deltaguide::models::train::TrainConfig;
use deltaguide::synth::io::{load_cohort, save_cohort};
use deltaguide::synth::{
    random_structure, simulate_cohort_with_policy, CausalStructure, RandomStructureParams, SimulationConfig,
    TreatmentPolicy,
};
use deltaguide::{Error, Result};

#[derive(Parser)]
#[command(name = "deltaguide", version, about = "Cohort simulation, treatment-effect estimation and effect-guided prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a random structure document.
    GenerateStructure {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON object overriding generator parameters.
        #[arg(long)]
        params: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a structure document and print a summary.
    ValidateStructure { structure: PathBuf },
    /// Simulate a cohort to JSON lines.
    Simulate {
        #[arg(long)]
        structure: PathBuf,
        #[arg(long, default_value_t = 1000)]
        patients: usize,
        /// Overrides the structure's window count.
        #[arg(long)]
        windows: Option<usize>,
        #[arg(long, default_value_t = 0.5)]
        obs_rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.25)]
        effect_sigma: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        emit_ground_truth: bool,
        /// Simulate every patient without medication.
        #[arg(long)]
        counterfactual_untreated: bool,
    },
    /// Estimate sequential treatment effects by propensity matching.
    EstimateIte {
        #[arg(long)]
        cohort: PathBuf,
        /// `auto` or a positive number.
        #[arg(long, default_value = "auto")]
        caliper: String,
        #[arg(long, default_value_t = 5)]
        min_group_size: usize,
        /// `auto` or a comma-separated lab list.
        #[arg(long, default_value = "auto")]
        relevant_labs: String,
        /// Structure document for automatic lab selection.
        #[arg(long)]
        structure: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Fit one model on one split and save it.
    Train {
        #[arg(long, value_enum, default_value = "dx")]
        task: TaskArg,
        #[arg(long, value_enum)]
        model: ModelArg,
        #[arg(long, value_enum, default_value = "none")]
        method: MethodArg,
        #[arg(long)]
        time_step: usize,
        #[arg(long, default_value_t = 5)]
        horizon: usize,
        /// Diagnosis code or lab index.
        #[arg(long)]
        outcome: usize,
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        deltas: Option<PathBuf>,
        #[arg(long)]
        structure: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "per-split")]
        delta_source: DeltaSourceArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON object overriding recurrent training settings.
        #[arg(long)]
        train_config: Option<String>,
        #[arg(long, default_value_t = 1.0)]
        ridge: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Run an experiment grid and write the result tables.
    Report {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        deltas: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        pvalues: Option<PathBuf>,
        #[arg(long)]
        series: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Dx,
    Lab,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Glm,
    Glmer,
    Lstm,
    Gru,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    None,
    Augment,
    Pretrain,
}

#[derive(Clone, Copy, ValueEnum)]
enum DeltaSourceArg {
    File,
    PerSplit,
}

fn parse_caliper(s: &str) -> Result<Caliper> {
    if s == "auto" {
        return Ok(Caliper::Auto);
    }
    match s.parse::<f64>() {
        Ok(c) if c > 0.0 => Ok(Caliper::Fixed(c)),
        _ => Err(Error::Config(format!("caliper must be 'auto' or a positive number, got '{s}'"))),
    }
}

fn parse_labs(s: &str) -> Result<RelevantLabs> {
    if s == "auto" {
        return Ok(RelevantLabs::Auto);
    }
    s.split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map(RelevantLabs::Explicit)
        .map_err(|_| Error::Config(format!("relevant labs must be 'auto' or a comma-separated list, got '{s}'")))
}

fn load_structure(path: &Path) -> Result<CausalStructure> {
    CausalStructure::load(path)
}

fn generate_structure(seed: u64, params: Option<&str>, out: &Path) -> Result<()> {
    let mut p: RandomStructureParams = match params {
        Some(text) => serde_json::from_str(text).map_err(|e| Error::Config(format!("structure parameters: {e}")))?,
        None => RandomStructureParams::default(),
    };
    p.seed = seed;
    random_structure(&p)?.save(out)
}

fn validate_structure(path: &Path) -> Result<()> {
    let s = load_structure(path)?;
    println!(
        "valid: {} diseases, {} labs, {} outcomes, {} treatment digits, {} windows",
        s.diseases.len(),
        s.labs.len(),
        s.outcomes.len(),
        s.n_digits(),
        s.n_windows
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    structure: &Path,
    patients: usize,
    windows: Option<usize>,
    obs_rate: f64,
    seed: u64,
    effect_sigma: f64,
    out: &Path,
    ground_truth: bool,
    untreated: bool,
) -> Result<()> {
    let mut s = load_structure(structure)?;
    if let Some(t) = windows {
        if t < 2 {
            return Err(Error::Config("at least two windows are needed".into()));
        }
        s.n_windows = t;
    }
    let config = SimulationConfig {
        n_patients: patients,
        observation_rate: obs_rate,
        individual_effect_sigma: effect_sigma,
        rng_seed: seed,
        ..SimulationConfig::default()
    };
    let policy = if untreated {
        TreatmentPolicy::Untreated
    } else {
        TreatmentPolicy::Natural
    };
    let cohort = simulate_cohort_with_policy(&s, &config, &policy)?;
    save_cohort(&cohort, out, ground_truth)?;
    eprintln!(
        "{} patients, {} windows, observed fraction {:.4}",
        cohort.patients.len(),
        cohort.n_windows,
        cohort.observed_fraction()
    );
    Ok(())
}

fn estimate_ite(
    cohort: &Path,
    caliper: &str,
    min_group_size: usize,
    relevant_labs: &str,
    structure: Option<&Path>,
    out: &Path,
    report: Option<&Path>,
) -> Result<()> {
    let config = IteConfig {
        caliper: parse_caliper(caliper)?,
        min_group_size,
        relevant_labs: parse_labs(relevant_labs)?,
        ..IteConfig::default()
    };
    let structure = structure.map(load_structure).transpose()?;
    let cohort = load_cohort(cohort)?;
    let imputed = ImputedLabs::from_cohort(&cohort)?;
    let est = build_delta_sequences(&cohort, &imputed, &config, structure.as_ref(), None)?;
    save_deltas(&est.deltas, out)?;
    if let Some(path) = report {
        save_match_report(&est.report, path)?;
    }
    eprintln!(
        "{} group pairs, {} effect records, {} matched, {} dropped at the horizon",
        est.report.len(),
        est.deltas.records.len(),
        est.deltas.n_matched(),
        est.dropped_horizon
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train(
    task: TaskArg,
    model: ModelArg,
    method: MethodArg,
    time_step: usize,
    horizon: usize,
    outcome: usize,
    cohort: &Path,
    deltas: Option<&Path>,
    structure: Option<&Path>,
    delta_source: DeltaSourceArg,
    seed: u64,
    train_config: Option<&str>,
    ridge: f64,
    out: &Path,
    metrics: Option<&Path>,
) -> Result<()> {
    let task = match task {
        TaskArg::Dx => Task::Diagnosis,
        TaskArg::Lab => Task::LabForecast,
    };
    let model = match model {
        ModelArg::Glm => ModelKind::Glm,
        ModelArg::Glmer => ModelKind::Glmer,
        ModelArg::Lstm => ModelKind::Lstm,
        ModelArg::Gru => ModelKind::Gru,
    };
    let method = match method {
        MethodArg::None => Method::None,
        MethodArg::Augment => Method::Augment,
        MethodArg::Pretrain => Method::Pretrain,
    };
    let train: TrainConfig = match train_config {
        Some(text) => serde_json::from_str(text).map_err(|e| Error::Config(format!("training settings: {e}")))?,
        None => TrainConfig::default(),
    };
    let config = ExperimentConfig {
        cell: Cell {
            outcome,
            model,
            method,
            time_step,
        },
        settings: ExperimentSettings {
            task,
            horizon,
            runs: 1,
            base_seed: seed,
            delta_source: match delta_source {
                DeltaSourceArg::File => DeltaSource::File,
                DeltaSourceArg::PerSplit => DeltaSource::PerSplit,
            },
            train,
            glm_ridge: ridge,
            ..ExperimentSettings::default()
        },
    };
    let structure = structure.map(load_structure).transpose()?;
    let cohort = load_cohort(cohort)?;
    let deltas = deltas.map(load_deltas).transpose()?;
    let fitted = train_model(&config, &cohort, deltas.as_ref(), structure.as_ref(), 0)?;
    let meta = json!({
        "task": task,
        "outcome": outcome,
        "model": model,
        "method": method,
        "time_step": time_step,
        "horizon": horizon,
        "seed": seed,
        "metric_name": fitted.metric_name,
        "metric": fitted.metric,
    });
    let linear_kind = |base: &str| match task {
        Task::Diagnosis => base.to_string(),
        Task::LabForecast => base.replacen("g", "", 1),
    };
    let ckpt = match &fitted.model {
        FittedModel::Linear(m) => Checkpoint::from_linear(&linear_kind(model.name()), m, meta.clone()),
        FittedModel::Recurrent(p) => Checkpoint::from_recurrent(p, meta.clone()),
        FittedModel::Constant(_) => return Err(Error::Config("constant models have no checkpoint".into())),
    };
    ckpt.save(out)?;
    let report = json!({
        "config": config,
        "metric_name": fitted.metric_name,
        "metric": fitted.metric,
        "n_train": fitted.n_train,
        "n_test": fitted.n_test,
        "delta_pvalues": fitted.pvalues,
    });
    match metrics {
        Some(path) => std::fs::write(path, serde_json::to_string_pretty(&report)? + "\n")?,
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    eprintln!("{} = {:.5}", fitted.metric_name, fitted.metric);
    Ok(())
}

fn report(
    grid: &Path,
    cohort: &Path,
    deltas: Option<&Path>,
    out: &Path,
    pvalues: Option<&Path>,
    series: Option<&Path>,
) -> Result<()> {
    let text = std::fs::read_to_string(grid)?;
    let spec: GridSpec = serde_json::from_str(&text).map_err(|e| Error::Config(format!("grid file: {e}")))?;
    let structure = match &spec.structure {
        Some(p) => {
            let p = if p.is_relative() {
                grid.parent().unwrap_or(Path::new(".")).join(p)
            } else {
                p.clone()
            };
            Some(load_structure(&p)?)
        }
        None => None,
    };
    let cohort = load_cohort(cohort)?;
    let deltas = deltas.map(load_deltas).transpose()?;
    let result = run_grid(&spec, &cohort, deltas.as_ref(), structure.as_ref(), &|m| eprintln!("{m}"))?;
    save_results(&result, out)?;
    if let Some(p) = pvalues {
        save_pvalues(&result, p)?;
    }
    if let Some(p) = series {
        save_series(&result, p)?;
    }
    let failed = result.rows.iter().filter(|r| r.error.is_some()).count();
    eprintln!("{} cells, {failed} failed", result.rows.len());
    let all_invalid = !result.rows.is_empty()
        && result
            .rows
            .iter()
            .all(|r| r.error.as_deref().is_some_and(|e| e.starts_with("all runs invalid")));
    if all_invalid {
        return Err(Error::AllRunsInvalid("every cell of the grid".into()));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateStructure { seed, params, out } => generate_structure(seed, params.as_deref(), &out),
        Command::ValidateStructure { structure } => validate_structure(&structure),
        Command::Simulate {
            structure,
            patients,
            windows,
            obs_rate,
            seed,
            effect_sigma,
            out,
            emit_ground_truth,
            counterfactual_untreated,
        } => simulate(
            &structure,
            patients,
            windows,
            obs_rate,
            seed,
            effect_sigma,
            &out,
            emit_ground_truth,
            counterfactual_untreated,
        ),
        Command::EstimateIte {
            cohort,
            caliper,
            min_group_size,
            relevant_labs,
            structure,
            out,
            report,
        } => estimate_ite(
            &cohort,
            &caliper,
            min_group_size,
            &relevant_labs,
            structure.as_deref(),
            &out,
            report.as_deref(),
        ),
        Command::Train {
            task,
            model,
            method,
            time_step,
            horizon,
            outcome,
            cohort,
            deltas,
            structure,
            delta_source,
            seed,
            train_config,
            ridge,
            out,
            metrics,
        } => train(
            task,
            model,
            method,
            time_step,
            horizon,
            outcome,
            &cohort,
            deltas.as_deref(),
            structure.as_deref(),
            delta_source,
            seed,
            train_config.as_deref(),
            ridge,
            &out,
            metrics.as_deref(),
        ),
        Command::Report {
            grid,
            cohort,
            deltas,
            out,
            pvalues,
            series,
        } => report(&grid, &cohort, deltas.as_deref(), &out, pvalues.as_deref(), series.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
