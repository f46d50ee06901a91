//! Mini-batch SGD with momentum for the recurrent models: supervised training
//! from scratch, unsupervised effect pretraining and fine-tuning.
//!
//! Seeded rng streams: 0 recurrent weights, 1 task head, 2 pretrain head,
//! 3 validation split and batch order. A fine-tuned model and a model trained
//! from scratch with the same seed therefore share the task head and the
//! batch order and differ only in their recurrent starting point.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::glm::sigmoid;
use super::rnn::{
    batch_matrices, clip_gradients, objective_loss, rnn_backward, rnn_forward, CellType, Head, Objective,
    RecurrentParams, TaskLoss,
};
use super::sequence::SequenceSample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// L2 penalty on weight matrices (not biases).
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub seed: u64,
    pub patience: usize,
    pub validation_fraction: f64,
    /// Give unmatched-addition windows zero weight in the pretraining loss.
    pub mask_unmatched: bool,
    /// Fine-tuning updates only the task head.
    pub freeze_recurrent: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden_dim: 32,
            learning_rate: 1e-3,
            momentum: 0.9,
            epochs: 100,
            batch_size: 64,
            weight_decay: 1e-5,
            clip_norm: 5.0,
            seed: 0,
            patience: 10,
            validation_fraction: 0.1,
            mask_unmatched: false,
            freeze_recurrent: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.hidden_dim > 0
            && self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.momentum)
            && self.batch_size > 0
            && self.weight_decay >= 0.0
            && self.clip_norm > 0.0
            && (0.0..1.0).contains(&self.validation_fraction);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training configuration {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
    /// Epoch (1-based) whose weights were kept; 0 means the initial weights.
    pub best_epoch: usize,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Recurrent weights for `config.seed`, no heads.
pub fn initial_params(cell: CellType, input_dim: usize, config: &TrainConfig) -> RecurrentParams {
    RecurrentParams::init(cell, input_dim, config.hidden_dim, &mut stream(config.seed, 0))
}

fn fresh_task_head(hidden: usize, seed: u64) -> Head {
    Head::init(1, hidden, &mut stream(seed, 1))
}

enum Targets<'a> {
    Task { loss: TaskLoss, samples: &'a [SequenceSample] },
    Pretrain { samples: &'a [SequenceSample], mask_unmatched: bool },
}

impl Targets<'_> {
    fn samples(&self) -> &[SequenceSample] {
        match self {
            Targets::Task { samples, .. } | Targets::Pretrain { samples, .. } => samples,
        }
    }

    /// Forward, loss and (optionally) gradients on the given sample indices.
    fn evaluate(&self, params: &RecurrentParams, idx: &[usize], with_grad: bool) -> Result<(f64, Option<RecurrentParams>)> {
        let samples = self.samples();
        let seqs: Vec<&[Vec<f64>]> = idx.iter().map(|&i| samples[i].inputs.as_slice()).collect();
        let inputs = batch_matrices(&seqs)?;
        let cache = rnn_forward(params, &inputs)?;
        let labels: Vec<f64>;
        let deltas: Vec<DMatrix<f64>>;
        let mask: Vec<Vec<bool>>;
        let objective = match self {
            Targets::Task { loss, .. } => {
                labels = idx.iter().map(|&i| samples[i].label).collect();
                Objective::Task { loss: *loss, targets: &labels }
            }
            Targets::Pretrain { mask_unmatched, .. } => {
                let t_seqs: Vec<&[Vec<f64>]> = idx.iter().map(|&i| samples[i].delta_targets.as_slice()).collect();
                deltas = batch_matrices(&t_seqs)?;
                if *mask_unmatched {
                    let k = inputs.len();
                    mask = (0..k).map(|t| idx.iter().map(|&i| !samples[i].unmatched[t]).collect()).collect();
                    Objective::Pretrain { targets: &deltas, mask: Some(&mask) }
                } else {
                    Objective::Pretrain { targets: &deltas, mask: None }
                }
            }
        };
        if with_grad {
            let (loss, grads) = rnn_backward(params, &inputs, &cache, &objective)?;
            Ok((loss, Some(grads)))
        } else {
            Ok((objective_loss(params, &cache, &objective)?, None))
        }
    }
}

fn check_samples(samples: &[SequenceSample], params: &RecurrentParams) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Data("no training sequences".into()));
    }
    let k = samples[0].time_step();
    for s in samples {
        if s.time_step() != k || s.inputs.iter().any(|r| r.len() != params.input_dim) {
            return Err(Error::Dimension(format!(
                "patient {}: sequence shape differs from {k} windows x {} features",
                s.patient_id, params.input_dim
            )));
        }
        if s.inputs.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("patient {}: non-finite input", s.patient_id)));
        }
    }
    Ok(())
}

fn optimize(params: &mut RecurrentParams, targets: &Targets, config: &TrainConfig, head_only: bool) -> Result<TrainReport> {
    config.validate()?;
    check_samples(targets.samples(), params)?;
    let n = targets.samples().len();
    let mut rng = stream(config.seed, 3);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_val = ((n as f64) * config.validation_fraction).floor() as usize;
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();
    let val_idx = val_idx.to_vec();

    let mut report = TrainReport::default();
    let mut velocity = params.zeros_like();
    let mut best = params.clone();
    let mut best_loss = if val_idx.is_empty() { f64::INFINITY } else { targets.evaluate(params, &val_idx, false)?.0 };
    let mut stale = 0;
    for epoch in 1..=config.epochs {
        train_idx.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in train_idx.chunks(config.batch_size) {
            let (loss, grads) = targets.evaluate(params, chunk, true)?;
            let mut grads = grads.expect("gradients requested");
            epoch_loss += loss * chunk.len() as f64;
            if config.weight_decay > 0.0 {
                let theta = params.tensors();
                for ((name, g), (_, p)) in grads.tensors_mut().into_iter().zip(theta) {
                    if !name.ends_with('b') {
                        g.iter_mut().zip(p).for_each(|(gv, pv)| *gv += config.weight_decay * pv);
                    }
                }
            }
            if head_only {
                grads.w.fill(0.0);
                grads.u.fill(0.0);
                grads.b.fill(0.0);
            }
            clip_gradients(&mut grads, config.clip_norm);
            for ((_, v), (_, g)) in velocity.tensors_mut().into_iter().zip(grads.tensors()) {
                v.iter_mut().zip(g).for_each(|(vv, gv)| *vv = config.momentum * *vv - config.learning_rate * gv);
            }
            for ((_, p), (_, v)) in params.tensors_mut().into_iter().zip(velocity.tensors()) {
                p.iter_mut().zip(v).for_each(|(pv, vv)| *pv += vv);
            }
        }
        if !params.is_finite() {
            return Err(Error::Numeric(format!("parameters diverged in epoch {epoch}")));
        }
        report.train_loss.push(epoch_loss / train_idx.len().max(1) as f64);
        if val_idx.is_empty() {
            best = params.clone();
            report.best_epoch = epoch;
            continue;
        }
        let val = targets.evaluate(params, &val_idx, false)?.0;
        report.validation_loss.push(val);
        if val < best_loss {
            best_loss = val;
            best = params.clone();
            report.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    *params = best;
    Ok(report)
}

/// Supervised training of a freshly initialised network.
pub fn train_from_scratch(
    cell: CellType,
    samples: &[SequenceSample],
    loss: TaskLoss,
    config: &TrainConfig,
) -> Result<(RecurrentParams, TrainReport)> {
    let d = samples.first().map_or(0, SequenceSample::input_dim);
    let mut params = initial_params(cell, d, config);
    params.task_head = Some(fresh_task_head(config.hidden_dim, config.seed));
    let report = optimize(&mut params, &Targets::Task { loss, samples }, config, false)?;
    Ok((params, report))
}

/// Fit the recurrent weights and a pretrain head to predict each window's
/// effect from that window's inputs. Labels are never read.
pub fn pretrain(
    mut params: RecurrentParams,
    samples: &[SequenceSample],
    config: &TrainConfig,
) -> Result<(RecurrentParams, TrainReport)> {
    let width = samples.first().and_then(|s| s.delta_targets.first()).map_or(0, Vec::len);
    if width == 0 {
        return Err(Error::Data("pretraining needs effect targets".into()));
    }
    if samples.iter().any(|s| s.delta_targets.len() != s.time_step() || s.delta_targets.iter().any(|r| r.len() != width)) {
        return Err(Error::Alignment("effect targets do not match the input windows".into()));
    }
    params.task_head = None;
    params.pretrain_head = Some(Head::init(width, params.hidden_dim, &mut stream(config.seed, 2)));
    let report = optimize(
        &mut params,
        &Targets::Pretrain { samples, mask_unmatched: config.mask_unmatched },
        config,
        false,
    )?;
    Ok((params, report))
}

/// Drop the pretrain head, attach a fresh task head and train on the task.
/// The pretrained object itself is left untouched.
pub fn finetune(
    pretrained: &RecurrentParams,
    samples: &[SequenceSample],
    loss: TaskLoss,
    config: &TrainConfig,
) -> Result<(RecurrentParams, TrainReport)> {
    if pretrained.hidden_dim != config.hidden_dim {
        return Err(Error::Config(format!(
            "pretrained hidden size {} differs from configured {}",
            pretrained.hidden_dim, config.hidden_dim
        )));
    }
    let mut params = pretrained.clone();
    params.pretrain_head = None;
    params.task_head = Some(fresh_task_head(config.hidden_dim, config.seed));
    let report = optimize(&mut params, &Targets::Task { loss, samples }, config, config.freeze_recurrent)?;
    Ok((params, report))
}

/// Task predictions: probabilities for cross-entropy models, values for MSE models.
pub fn predict(params: &RecurrentParams, samples: &[SequenceSample], loss: TaskLoss) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(256) {
        let seqs: Vec<&[Vec<f64>]> = chunk.iter().map(|s| s.inputs.as_slice()).collect();
        let cache = rnn_forward(params, &batch_matrices(&seqs)?)?;
        let s = cache
            .task_out
            .ok_or_else(|| Error::Config("model has no task head".into()))?;
        out.extend(s.iter().map(|&v| match loss {
            TaskLoss::CrossEntropy => sigmoid(v),
            TaskLoss::Mse => v,
        }));
    }
    Ok(out)
}

/// Per-window pretrain head outputs `[sample][K][|L|]`.
pub fn predict_deltas(params: &RecurrentParams, samples: &[SequenceSample]) -> Result<Vec<Vec<Vec<f64>>>> {
    if params.pretrain_head.is_none() {
        return Err(Error::Config("model has no pretrain head".into()));
    }
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(256) {
        let seqs: Vec<&[Vec<f64>]> = chunk.iter().map(|s| s.inputs.as_slice()).collect();
        let cache = rnn_forward(params, &batch_matrices(&seqs)?)?;
        for j in 0..chunk.len() {
            out.push(cache.pretrain_out.iter().map(|y| y.column(j).iter().copied().collect()).collect());
        }
    }
    Ok(out)
}
