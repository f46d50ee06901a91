//! Dataset assembly, metrics and the experiment grid.

pub mod dataset;
pub mod experiment;
pub mod impute;
pub mod metrics;
pub mod report;

pub use dataset::{assemble_dataset, DatasetSpec, FeatureScaling, Task};
pub use experiment::{
    run_experiment, run_grid, split_patients, train_model, Cell, DeltaSource, ExperimentConfig, ExperimentSettings,
    FittedModel, GridReport, GridSpec, Method, ModelKind, PValueRecord, ResultRow, TrainedModel,
};
pub use impute::{ImputationStats, ImputedLabs};
pub use metrics::{compute_auc, compute_mse};
