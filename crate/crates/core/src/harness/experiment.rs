//! Experiment cells over repeated patient-level splits, and the result grid.
//!
//! Run `r` splits the patients with seed `base_seed + r`. Imputation means,
//! feature scaling and (with [`DeltaSource::PerSplit`]) the propensity models
//! behind the effects are fitted on that run's training patients only.
//! Pretrained recurrent weights depend on the run, the time step and the
//! cell type but not on the outcome, so the grid pretrains each combination
//! once and shares it across outcomes.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{
    assemble_dataset, assemble_unlabelled, delta_columns, design_matrix, labels, DatasetSpec, FeatureScaling, Task,
};
use super::impute::{ImputationStats, ImputedLabs};
use super::metrics::{compute_auc, compute_mse};
use crate::error::{Error, Result};
use crate::ite::{build_delta_sequences, DeltaSet, IteConfig, RelevantLabs};
use crate::models::glm::{fit_glm, wald_pvalues, LinearPredictor};
use crate::models::lm::fit_lm_ridge;
use crate::models::mixed::{fit_random_intercept, Family, MixedOptions};
use crate::models::rnn::{CellType, RecurrentParams, TaskLoss};
use crate::models::sequence::{attach_deltas, augment, SequenceSample};
use crate::models::train::{finetune, initial_params, predict, pretrain, train_from_scratch, TrainConfig};
use crate::synth::{CausalStructure, Cohort};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Training-set mean for every patient.
    Constant,
    /// Logistic regression, or least squares for lab forecasts.
    Glm,
    /// Random-intercept analogue of [`ModelKind::Glm`].
    Glmer,
    Lstm,
    Gru,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Constant => "constant",
            ModelKind::Glm => "glm",
            ModelKind::Glmer => "glmer",
            ModelKind::Lstm => "lstm",
            ModelKind::Gru => "gru",
        }
    }

    pub fn cell_type(self) -> Option<CellType> {
        match self {
            ModelKind::Lstm => Some(CellType::Lstm),
            ModelKind::Gru => Some(CellType::Gru),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    None,
    Augment,
    Pretrain,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::None => "none",
            Method::Augment => "augment",
            Method::Pretrain => "pretrain",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaSource {
    /// Use the supplied effect file for every run.
    File,
    /// Re-estimate effects per run with propensity models fitted on the
    /// training patients; the file (if any) only fixes the lab list.
    PerSplit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSettings {
    pub task: Task,
    pub horizon: usize,
    pub runs: usize,
    pub train_fraction: f64,
    pub base_seed: u64,
    pub delta_source: DeltaSource,
    pub ite: IteConfig,
    pub train: TrainConfig,
    /// Defaults to `train`.
    pub pretrain: Option<TrainConfig>,
    pub glm_ridge: f64,
    pub mixed: MixedOptions,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        ExperimentSettings {
            task: Task::Diagnosis,
            horizon: 5,
            runs: 3,
            train_fraction: 0.8,
            base_seed: 0,
            delta_source: DeltaSource::PerSplit,
            ite: IteConfig::default(),
            train: TrainConfig::default(),
            pretrain: None,
            glm_ridge: 1.0,
            mixed: MixedOptions::default(),
        }
    }
}

impl ExperimentSettings {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.runs == 0 {
            return Err(Error::Config("horizon and runs must be at least 1".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!("train fraction {} outside (0, 1)", self.train_fraction)));
        }
        if !(self.glm_ridge >= 0.0) {
            return Err(Error::Config(format!("negative ridge {}", self.glm_ridge)));
        }
        self.train.validate()?;
        let pre = self.pretrain_config();
        pre.validate()?;
        if pre.hidden_dim != self.train.hidden_dim {
            return Err(Error::Config("pretraining and fine-tuning hidden sizes differ".into()));
        }
        Ok(())
    }

    fn pretrain_config(&self) -> TrainConfig {
        self.pretrain.clone().unwrap_or_else(|| self.train.clone())
    }

    fn metric_name(&self) -> &'static str {
        match self.task {
            Task::Diagnosis => "AUC",
            Task::LabForecast => "MSE",
        }
    }
}

/// One grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub outcome: usize,
    pub model: ModelKind,
    pub method: Method,
    pub time_step: usize,
}

impl Cell {
    /// Pretraining needs a recurrent network.
    pub fn is_applicable(&self) -> bool {
        self.method != Method::Pretrain || self.model.cell_type().is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub cell: Cell,
    pub settings: ExperimentSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub cell: Cell,
    pub task: Task,
    pub metric_name: String,
    /// Per run; `None` marks an invalid run.
    pub runs: Vec<Option<f64>>,
    /// Mean over the valid runs.
    pub mean: Option<f64>,
    pub error: Option<String>,
}

impl ResultRow {
    pub fn outcome_label(&self) -> String {
        outcome_label(self.task, self.cell.outcome)
    }
}

pub fn outcome_label(task: Task, outcome: usize) -> String {
    match task {
        Task::Diagnosis => format!("dx{outcome}"),
        Task::LabForecast => format!("lab{outcome}"),
    }
}

/// Wald p-values of the effect coefficients of one augmented linear fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValueRecord {
    pub cell: Cell,
    pub run: usize,
    pub pvalues: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub task: Option<Task>,
    pub rows: Vec<ResultRow>,
    pub pvalues: Vec<PValueRecord>,
}

/// Patient-level split: sorted ids shuffled with `seed`, first share to training.
pub fn split_patients(cohort: &Cohort, train_fraction: f64, seed: u64) -> Result<(HashSet<u64>, HashSet<u64>)> {
    let mut ids: Vec<u64> = cohort.patients.iter().map(|p| p.patient_id).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(Error::Data("need at least two patients to split".into()));
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((ids.len() as f64 * train_fraction).round() as usize).clamp(1, ids.len() - 1);
    Ok((ids[..n_train].iter().copied().collect(), ids[n_train..].iter().copied().collect()))
}

struct RunContext {
    run: usize,
    train: HashSet<u64>,
    test: HashSet<u64>,
    imputed: ImputedLabs,
    deltas: DeltaSet,
    scaling: FeatureScaling,
}

fn build_context(
    cohort: &Cohort,
    file_deltas: Option<&DeltaSet>,
    structure: Option<&CausalStructure>,
    settings: &ExperimentSettings,
    run: usize,
) -> Result<RunContext> {
    let (train, test) = split_patients(cohort, settings.train_fraction, settings.base_seed + run as u64)?;
    let stats = ImputationStats::fit(cohort.patients.iter().filter(|p| train.contains(&p.patient_id)), cohort.n_labs)?;
    let imputed = ImputedLabs::new(cohort, &stats);
    let deltas = match settings.delta_source {
        DeltaSource::File => file_deltas
            .ok_or_else(|| Error::Config("effect source 'file' needs an effect file".into()))?
            .clone(),
        DeltaSource::PerSplit => {
            let mut ite = settings.ite.clone();
            if let (Some(file), None, RelevantLabs::Auto) = (file_deltas, structure, &ite.relevant_labs) {
                ite.relevant_labs = RelevantLabs::Explicit(file.relevant_labs.clone());
            }
            build_delta_sequences(cohort, &imputed, &ite, structure, Some(&train))?.deltas
        }
    };
    deltas.check_alignment(cohort)?;
    let scaling = FeatureScaling::fit(cohort, &imputed, Some(&deltas), &train)?;
    Ok(RunContext {
        run,
        train,
        test,
        imputed,
        deltas,
        scaling,
    })
}

fn prepared(mut samples: Vec<SequenceSample>, ctx: &RunContext) -> Result<Vec<SequenceSample>> {
    ctx.scaling.standardize(&mut samples)?;
    attach_deltas(&mut samples, &ctx.deltas, &ctx.scaling.delta_scale)?;
    Ok(samples)
}

fn dataset_spec(cell: &Cell, settings: &ExperimentSettings) -> DatasetSpec {
    DatasetSpec {
        task: settings.task,
        outcome: cell.outcome,
        time_step: cell.time_step,
        horizon: settings.horizon,
    }
}

fn run_config(config: &TrainConfig, settings: &ExperimentSettings, run: usize) -> TrainConfig {
    TrainConfig {
        seed: settings.base_seed + run as u64,
        ..config.clone()
    }
}

type PretrainKey = (usize, usize, CellType);

fn pretrain_job(
    cohort: &Cohort,
    ctx: &RunContext,
    settings: &ExperimentSettings,
    time_step: usize,
    cell: CellType,
) -> Result<RecurrentParams> {
    let spec = DatasetSpec {
        task: settings.task,
        outcome: 0,
        time_step,
        horizon: settings.horizon,
    };
    let samples = prepared(assemble_unlabelled(cohort, &ctx.imputed, &spec, Some(&ctx.train))?, ctx)?;
    let config = run_config(&settings.pretrain_config(), settings, ctx.run);
    let init = initial_params(cell, cohort.n_labs, &config);
    Ok(pretrain(init, &samples, &config)?.0)
}

struct RunOutcome {
    metric: f64,
    pvalues: Vec<f64>,
    model: FittedModel,
    n_train: usize,
    n_test: usize,
}

/// Parameters of one fitted run.
#[derive(Debug, Clone)]
pub enum FittedModel {
    /// Training-set mean (probability or lab value).
    Constant(f64),
    Linear(LinearPredictor),
    Recurrent(RecurrentParams),
}

fn rows_of(x: &DMatrix<f64>) -> impl Iterator<Item = Vec<f64>> + '_ {
    x.row_iter().map(|r| r.iter().copied().collect())
}

/// Effect columns that vary in the training design; constant columns carry
/// no estimable coefficient.
fn estimable_delta_columns(x: &DMatrix<f64>, k: usize, d: usize, width: usize) -> Vec<usize> {
    delta_columns(k, d, width)
        .into_iter()
        .filter(|&j| {
            let col = x.column(j);
            col.iter().any(|&v| v != col[0])
        })
        .collect()
}

fn linear_pvalues(model: &LinearPredictor, cols: &[usize]) -> Result<Vec<f64>> {
    if cols.is_empty() {
        return Ok(Vec::new());
    }
    wald_pvalues(model, cols)
}

fn run_once(
    cohort: &Cohort,
    ctx: &RunContext,
    cell: &Cell,
    settings: &ExperimentSettings,
    pretrained: Option<&RecurrentParams>,
) -> Result<RunOutcome> {
    let spec = dataset_spec(cell, settings);
    let train = prepared(assemble_dataset(cohort, &ctx.imputed, &spec, Some(&ctx.train))?, ctx)?;
    let test = prepared(assemble_dataset(cohort, &ctx.imputed, &spec, Some(&ctx.test))?, ctx)?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::UndefinedMetric("empty training or test set".into()));
    }
    let (train, test) = if cell.method == Method::Augment {
        (augment(&train)?, augment(&test)?)
    } else {
        (train, test)
    };
    let (n_train, n_test) = (train.len(), test.len());
    let y = labels(&train);
    let width = ctx.deltas.width();
    let mut pvalues = Vec::new();
    let model;
    let scores: Vec<f64> = match cell.model {
        ModelKind::Constant => {
            let m = y.iter().sum::<f64>() / y.len() as f64;
            model = FittedModel::Constant(m);
            vec![m; test.len()]
        }
        ModelKind::Glm | ModelKind::Glmer => {
            let x = design_matrix(&train)?;
            let xt = design_matrix(&test)?;
            let cols = if cell.method == Method::Augment {
                estimable_delta_columns(&x, cell.time_step, cohort.n_labs, width)
            } else {
                Vec::new()
            };
            match (cell.model, settings.task) {
                (ModelKind::Glm, Task::Diagnosis) => {
                    let fit = fit_glm(&x, &y, settings.glm_ridge)?;
                    pvalues = linear_pvalues(&fit.model, &cols)?;
                    let scores = rows_of(&xt).map(|r| fit.predict_proba(&r)).collect();
                    model = FittedModel::Linear(fit.model);
                    scores
                }
                (ModelKind::Glm, Task::LabForecast) => {
                    let fit = fit_lm_ridge(&x, &y, settings.glm_ridge)?;
                    pvalues = linear_pvalues(&fit.model, &cols)?;
                    let scores = rows_of(&xt).map(|r| fit.predict(&r)).collect();
                    model = FittedModel::Linear(fit.model);
                    scores
                }
                _ => {
                    let family = match settings.task {
                        Task::Diagnosis => Family::Binomial,
                        Task::LabForecast => Family::Gaussian,
                    };
                    let groups: Vec<u64> = train.iter().map(|s| s.patient_id).collect();
                    let options = MixedOptions {
                        ridge: settings.glm_ridge,
                        ..settings.mixed.clone()
                    };
                    let fit = fit_random_intercept(&x, &y, &groups, family, &options)?;
                    pvalues = linear_pvalues(&fit.model, &cols)?;
                    let scores = rows_of(&xt).map(|r| fit.predict(&r, None)).collect();
                    model = FittedModel::Linear(fit.model);
                    scores
                }
            }
        }
        ModelKind::Lstm | ModelKind::Gru => {
            let cell_type = cell.model.cell_type().expect("recurrent");
            let config = run_config(&settings.train, settings, ctx.run);
            let (loss, shift, scale) = match settings.task {
                Task::Diagnosis => (TaskLoss::CrossEntropy, 0.0, 1.0),
                Task::LabForecast => {
                    let m = y.iter().sum::<f64>() / y.len() as f64;
                    let v = y.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / y.len() as f64;
                    (TaskLoss::Mse, m, if v > 1e-12 { v.sqrt() } else { 1.0 })
                }
            };
            let mut train = train;
            for s in &mut train {
                s.label = (s.label - shift) / scale;
            }
            if y.iter().all(|&v| v == y[0]) && loss == TaskLoss::CrossEntropy {
                return Err(Error::DegenerateFit("single-class training labels".into()));
            }
            let (params, _) = match (cell.method, pretrained) {
                (Method::Pretrain, Some(p)) => finetune(p, &train, loss, &config)?,
                (Method::Pretrain, None) => return Err(Error::Config("pretrained weights missing".into())),
                _ => train_from_scratch(cell_type, &train, loss, &config)?,
            };
            let scores = predict(&params, &test, loss)?.into_iter().map(|v| v * scale + shift).collect();
            model = FittedModel::Recurrent(params);
            scores
        }
    };
    let truth = labels(&test);
    let metric = match settings.task {
        Task::Diagnosis => {
            let b: Vec<bool> = truth.iter().map(|&v| v > 0.5).collect();
            compute_auc(&scores, &b)?
        }
        Task::LabForecast => compute_mse(&scores, &truth)?,
    };
    Ok(RunOutcome {
        metric,
        pvalues,
        model,
        n_train,
        n_test,
    })
}

fn is_invalid_run(e: &Error) -> bool {
    matches!(e, Error::UndefinedMetric(_) | Error::DegenerateFit(_))
}

/// Progress messages (invalid runs, failed cells).
pub type Log<'a> = &'a (dyn Fn(&str) + Sync);

fn aggregate(
    cell: Cell,
    settings: &ExperimentSettings,
    outcomes: Vec<Result<RunOutcome>>,
    log: Log,
) -> Result<(ResultRow, Vec<PValueRecord>)> {
    let mut runs = Vec::with_capacity(outcomes.len());
    let mut pvalues = Vec::new();
    for (r, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(o) => {
                runs.push(Some(o.metric));
                if !o.pvalues.is_empty() {
                    pvalues.push(PValueRecord {
                        cell,
                        run: r,
                        pvalues: o.pvalues,
                    });
                }
            }
            Err(e) if is_invalid_run(&e) => {
                log(&format!(
                    "warning: {} {} {} K={} run {r} invalid: {e}",
                    outcome_label(settings.task, cell.outcome),
                    cell.model.name(),
                    cell.method.name(),
                    cell.time_step
                ));
                runs.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    let valid: Vec<f64> = runs.iter().flatten().copied().collect();
    if valid.is_empty() {
        return Err(Error::AllRunsInvalid(format!(
            "{} {} {} K={}",
            outcome_label(settings.task, cell.outcome),
            cell.model.name(),
            cell.method.name(),
            cell.time_step
        )));
    }
    Ok((
        ResultRow {
            cell,
            task: settings.task,
            metric_name: settings.metric_name().into(),
            runs,
            mean: Some(valid.iter().sum::<f64>() / valid.len() as f64),
            error: None,
        },
        pvalues,
    ))
}

/// Shared execution of a list of cells.
fn execute(
    cells: &[Cell],
    settings: &ExperimentSettings,
    cohort: &Cohort,
    deltas: Option<&DeltaSet>,
    structure: Option<&CausalStructure>,
    log: Log,
) -> Result<Vec<Result<(ResultRow, Vec<PValueRecord>)>>> {
    settings.validate()?;
    if let Some(c) = cells.iter().find(|c| !c.is_applicable()) {
        return Err(Error::Config(format!("{} cannot be pretrained", c.model.name())));
    }
    for c in cells {
        dataset_spec(c, settings).input_windows(cohort.n_windows)?;
    }
    let contexts = (0..settings.runs)
        .map(|r| build_context(cohort, deltas, structure, settings, r))
        .collect::<Result<Vec<_>>>()?;

    let keys: BTreeSet<PretrainKey> = cells
        .iter()
        .filter(|c| c.method == Method::Pretrain)
        .flat_map(|c| {
            let ct = c.model.cell_type().expect("applicable");
            (0..settings.runs).map(move |r| (r, c.time_step, ct))
        })
        .collect();
    let keys: Vec<PretrainKey> = keys.into_iter().collect();
    let pretrained: BTreeMap<PretrainKey, Result<RecurrentParams>> = keys
        .par_iter()
        .map(|&(r, k, ct)| ((r, k, ct), pretrain_job(cohort, &contexts[r], settings, k, ct)))
        .collect::<Vec<_>>()
        .into_iter()
        .collect();

    let jobs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..settings.runs).map(move |r| (c, r))).collect();
    let mut outcomes: Vec<Result<RunOutcome>> = jobs
        .par_iter()
        .map(|&(c, r)| {
            let cell = &cells[c];
            let pre = match (cell.method, cell.model.cell_type()) {
                (Method::Pretrain, Some(ct)) => match &pretrained[&(r, cell.time_step, ct)] {
                    Ok(p) => Some(p),
                    Err(e) => return Err(Error::Data(format!("pretraining failed: {e}"))),
                },
                _ => None,
            };
            run_once(cohort, &contexts[r], cell, settings, pre)
        })
        .collect();

    let mut results = Vec::with_capacity(cells.len());
    for (i, cell) in cells.iter().enumerate().rev() {
        let per_cell: Vec<Result<RunOutcome>> = outcomes.split_off(i * settings.runs);
        results.push(aggregate(*cell, settings, per_cell, log));
    }
    results.reverse();
    Ok(results)
}

pub fn run_experiment(
    config: &ExperimentConfig,
    cohort: &Cohort,
    deltas: Option<&DeltaSet>,
    structure: Option<&CausalStructure>,
) -> Result<ResultRow> {
    let mut results = execute(&[config.cell], &config.settings, cohort, deltas, structure, &|m| eprintln!("{m}"))?;
    results.pop().expect("one cell").map(|(row, _)| row)
}

/// One fitted run with its test metric.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: FittedModel,
    pub metric_name: String,
    pub metric: f64,
    /// Wald p-values of the estimable effect coefficients (augmented linear fits).
    pub pvalues: Vec<f64>,
    pub n_train: usize,
    pub n_test: usize,
}

/// Fit a single run of one cell and keep the parameters.
pub fn train_model(
    config: &ExperimentConfig,
    cohort: &Cohort,
    deltas: Option<&DeltaSet>,
    structure: Option<&CausalStructure>,
    run: usize,
) -> Result<TrainedModel> {
    let settings = &config.settings;
    let cell = config.cell;
    settings.validate()?;
    if !cell.is_applicable() {
        return Err(Error::Config(format!("{} cannot be pretrained", cell.model.name())));
    }
    dataset_spec(&cell, settings).input_windows(cohort.n_windows)?;
    let ctx = build_context(cohort, deltas, structure, settings, run)?;
    let pre = match (cell.method, cell.model.cell_type()) {
        (Method::Pretrain, Some(ct)) => Some(pretrain_job(cohort, &ctx, settings, cell.time_step, ct)?),
        _ => None,
    };
    let o = run_once(cohort, &ctx, &cell, settings, pre.as_ref())?;
    Ok(TrainedModel {
        model: o.model,
        metric_name: settings.metric_name().into(),
        metric: o.metric,
        pvalues: o.pvalues,
        n_train: o.n_train,
        n_test: o.n_test,
    })
}

/// Declarative grid: one list per axis plus shared settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    #[serde(default)]
    pub outcomes: Vec<usize>,
    #[serde(default)]
    pub models: Vec<ModelKind>,
    #[serde(default)]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub time_steps: Vec<usize>,
    /// Per-model method lists overriding `methods`.
    #[serde(default)]
    pub model_methods: BTreeMap<ModelKind, Vec<Method>>,
    /// Structure document used to pick and mask effect labs when effects are
    /// re-estimated per split; relative paths resolve against the grid file.
    #[serde(default)]
    pub structure: Option<std::path::PathBuf>,
    #[serde(flatten)]
    pub settings: ExperimentSettings,
}

impl GridSpec {
    /// Cells in outcome, model, method, time-step order, skipping
    /// pretraining for linear models.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &outcome in &self.outcomes {
            for &model in &self.models {
                let methods = self.model_methods.get(&model).unwrap_or(&self.methods);
                for &method in methods {
                    for &time_step in &self.time_steps {
                        let cell = Cell {
                            outcome,
                            model,
                            method,
                            time_step,
                        };
                        if cell.is_applicable() {
                            out.push(cell);
                        }
                    }
                }
            }
        }
        out
    }
}

/// Run every cell; failing cells are recorded in their row and the grid continues.
pub fn run_grid(
    spec: &GridSpec,
    cohort: &Cohort,
    deltas: Option<&DeltaSet>,
    structure: Option<&CausalStructure>,
    log: Log,
) -> Result<GridReport> {
    let cells = spec.cells();
    if cells.is_empty() {
        return Ok(GridReport {
            task: Some(spec.settings.task),
            ..GridReport::default()
        });
    }
    let results = execute(&cells, &spec.settings, cohort, deltas, structure, log)?;
    let mut report = GridReport {
        task: Some(spec.settings.task),
        ..GridReport::default()
    };
    for (cell, r) in cells.into_iter().zip(results) {
        match r {
            Ok((row, p)) => {
                report.rows.push(row);
                report.pvalues.extend(p);
            }
            Err(e) => {
                log(&format!(
                    "error: {} {} {} K={}: {e}",
                    outcome_label(spec.settings.task, cell.outcome),
                    cell.model.name(),
                    cell.method.name(),
                    cell.time_step
                ));
                report.rows.push(ResultRow {
                    cell,
                    task: spec.settings.task,
                    metric_name: spec.settings.metric_name().into(),
                    runs: Vec::new(),
                    mean: None,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    Ok(report)
}

impl GridReport {
    pub fn row(&self, outcome: usize, model: ModelKind, method: Method, time_step: usize) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.cell == Cell { outcome, model, method, time_step })
    }

    pub fn mean(&self, outcome: usize, model: ModelKind, method: Method, time_step: usize) -> Option<f64> {
        self.row(outcome, model, method, time_step).and_then(|r| r.mean)
    }

    /// Every collected p-value with the time step of its fit.
    pub fn pvalues_by_time_step(&self) -> BTreeMap<usize, Vec<f64>> {
        let mut out: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for r in &self.pvalues {
            out.entry(r.cell.time_step).or_default().extend_from_slice(&r.pvalues);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_disjoint_and_seeded() {
        let cohort = crate::testutil::small_cohort(50, 3);
        let (a, b) = split_patients(&cohort, 0.8, 7).unwrap();
        assert_eq!(a.len(), 40);
        assert_eq!(b.len(), 10);
        assert!(a.is_disjoint(&b));
        assert_eq!(split_patients(&cohort, 0.8, 7).unwrap().0, a);
        assert_ne!(split_patients(&cohort, 0.8, 8).unwrap().0, a);
    }

    #[test]
    fn grid_cells_skip_linear_pretraining() {
        let spec = GridSpec {
            outcomes: vec![0, 1, 2, 3],
            models: vec![ModelKind::Glm, ModelKind::Glmer, ModelKind::Lstm, ModelKind::Gru],
            methods: vec![Method::None, Method::Augment, Method::Pretrain],
            time_steps: vec![10, 20, 30],
            model_methods: BTreeMap::from([
                (ModelKind::Lstm, vec![Method::None, Method::Pretrain]),
                (ModelKind::Gru, vec![Method::None, Method::Pretrain]),
            ]),
            structure: None,
            settings: ExperimentSettings::default(),
        };
        // 4 outcomes x 3 steps x 4 models x 2 methods, one row per method
        let cells = spec.cells();
        assert_eq!(cells.len(), 96);
        assert!(cells.iter().all(Cell::is_applicable));
        let json = serde_json::to_string(&spec).unwrap();
        let back: GridSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }
}
