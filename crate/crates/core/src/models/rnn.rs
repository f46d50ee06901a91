//! LSTM and GRU cells with exact backpropagation through time.
//!
//! A batch is a list of `K` input matrices, one per window, each
//! `input_dim x batch`. Hidden states are `hidden_dim x batch`.
//!
//! LSTM gate blocks are stacked `[i, f, g, o]`:
//! `c = f * c' + i * g`, `h = o * tanh(c)`.
//! GRU gate blocks are stacked `[z, r, n]`:
//! `n = tanh(W_n x + b_n + U_n (r * h'))`, `h = (1 - z) * h' + z * n`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::glm::{sigmoid, softplus};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellType {
    Lstm,
    Gru,
}

impl CellType {
    pub fn gates(self) -> usize {
        match self {
            CellType::Lstm => 4,
            CellType::Gru => 3,
        }
    }
}

/// Linear read-out `y = W h + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Head {
    pub fn zeros(out: usize, hidden: usize) -> Self {
        Head {
            w: DMatrix::zeros(out, hidden),
            b: DVector::zeros(out),
        }
    }

    pub fn init(out: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Head {
            w: DMatrix::from_fn(out, hidden, |_, _| rng.gen_range(-bound..bound)),
            b: DVector::zeros(out),
        }
    }

    fn apply(&self, h: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = &self.w * h;
        for mut col in y.column_iter_mut() {
            col += &self.b;
        }
        y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentParams {
    pub cell: CellType,
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// `gates * hidden x input`.
    pub w: DMatrix<f64>,
    /// `gates * hidden x hidden`.
    pub u: DMatrix<f64>,
    pub b: DVector<f64>,
    pub pretrain_head: Option<Head>,
    pub task_head: Option<Head>,
}

impl RecurrentParams {
    pub fn zeros(cell: CellType, input_dim: usize, hidden_dim: usize) -> Self {
        let g = cell.gates() * hidden_dim;
        RecurrentParams {
            cell,
            input_dim,
            hidden_dim,
            w: DMatrix::zeros(g, input_dim),
            u: DMatrix::zeros(g, hidden_dim),
            b: DVector::zeros(g),
            pretrain_head: None,
            task_head: None,
        }
    }

    /// Uniform(+-1/sqrt(fan_in)) weights, zero biases, LSTM forget bias +1.
    pub fn init(cell: CellType, input_dim: usize, hidden_dim: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(cell, input_dim, hidden_dim);
        let bw = 1.0 / (input_dim.max(1) as f64).sqrt();
        let bu = 1.0 / (hidden_dim as f64).sqrt();
        p.w = DMatrix::from_fn(p.w.nrows(), input_dim, |_, _| rng.gen_range(-bw..bw));
        p.u = DMatrix::from_fn(p.u.nrows(), hidden_dim, |_, _| rng.gen_range(-bu..bu));
        if cell == CellType::Lstm {
            p.b.rows_mut(hidden_dim, hidden_dim).fill(1.0);
        }
        p
    }

    /// Same shapes, all zeros, heads included where present.
    pub fn zeros_like(&self) -> Self {
        let mut z = Self::zeros(self.cell, self.input_dim, self.hidden_dim);
        z.pretrain_head = self.pretrain_head.as_ref().map(|h| Head::zeros(h.w.nrows(), self.hidden_dim));
        z.task_head = self.task_head.as_ref().map(|h| Head::zeros(h.w.nrows(), self.hidden_dim));
        z
    }

    /// Named parameter tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        let mut out: Vec<(&'static str, &[f64])> =
            vec![("w", self.w.as_slice()), ("u", self.u.as_slice()), ("b", self.b.as_slice())];
        if let Some(h) = &self.pretrain_head {
            out.push(("pretrain_w", h.w.as_slice()));
            out.push(("pretrain_b", h.b.as_slice()));
        }
        if let Some(h) = &self.task_head {
            out.push(("task_w", h.w.as_slice()));
            out.push(("task_b", h.b.as_slice()));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut out: Vec<(&'static str, &mut [f64])> = vec![
            ("w", self.w.as_mut_slice()),
            ("u", self.u.as_mut_slice()),
            ("b", self.b.as_mut_slice()),
        ];
        if let Some(h) = &mut self.pretrain_head {
            out.push(("pretrain_w", h.w.as_mut_slice()));
            out.push(("pretrain_b", h.b.as_mut_slice()));
        }
        if let Some(h) = &mut self.task_head {
            out.push(("task_w", h.w.as_mut_slice()));
            out.push(("task_b", h.b.as_mut_slice()));
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    pub fn n_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Everything the backward pass needs.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `K + 1` states, the first one all zeros.
    pub hidden: Vec<DMatrix<f64>>,
    /// LSTM cell states, `K + 1` entries.
    cells: Vec<DMatrix<f64>>,
    /// Activated gates per window.
    gates: Vec<DMatrix<f64>>,
    /// GRU `r * h'` per window.
    reset_hidden: Vec<DMatrix<f64>>,
    /// Pretrain head output per window (`|L| x batch`), when the head exists.
    pub pretrain_out: Vec<DMatrix<f64>>,
    /// Task head output from the last state, when the head exists.
    pub task_out: Option<DVector<f64>>,
}

fn check_inputs(params: &RecurrentParams, inputs: &[DMatrix<f64>]) -> Result<usize> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::Dimension("sequence has no windows".into()))?;
    let batch = first.ncols();
    for x in inputs {
        if x.nrows() != params.input_dim || x.ncols() != batch {
            return Err(Error::Dimension(format!(
                "window input is {}x{}, expected {}x{batch}",
                x.nrows(),
                x.ncols(),
                params.input_dim
            )));
        }
    }
    Ok(batch)
}

fn add_bias(m: &mut DMatrix<f64>, b: &DVector<f64>) {
    for mut col in m.column_iter_mut() {
        col += b;
    }
}

pub fn rnn_forward(params: &RecurrentParams, inputs: &[DMatrix<f64>]) -> Result<ForwardCache> {
    let batch = check_inputs(params, inputs)?;
    let h_dim = params.hidden_dim;
    let k = inputs.len();
    let mut cache = ForwardCache {
        hidden: Vec::with_capacity(k + 1),
        cells: Vec::new(),
        gates: Vec::with_capacity(k),
        reset_hidden: Vec::new(),
        pretrain_out: Vec::new(),
        task_out: None,
    };
    cache.hidden.push(DMatrix::zeros(h_dim, batch));
    match params.cell {
        CellType::Lstm => {
            cache.cells.push(DMatrix::zeros(h_dim, batch));
            for x in inputs {
                let h_prev = cache.hidden.last().expect("initial state");
                let c_prev = cache.cells.last().expect("initial cell");
                let mut a = &params.w * x + &params.u * h_prev;
                add_bias(&mut a, &params.b);
                for j in 0..batch {
                    for r in 0..4 * h_dim {
                        let v = a[(r, j)];
                        a[(r, j)] = if (2 * h_dim..3 * h_dim).contains(&r) { v.tanh() } else { sigmoid(v) };
                    }
                }
                let mut c = DMatrix::zeros(h_dim, batch);
                let mut h = DMatrix::zeros(h_dim, batch);
                for j in 0..batch {
                    for r in 0..h_dim {
                        let (i, f, g, o) = (a[(r, j)], a[(h_dim + r, j)], a[(2 * h_dim + r, j)], a[(3 * h_dim + r, j)]);
                        let cv = f * c_prev[(r, j)] + i * g;
                        c[(r, j)] = cv;
                        h[(r, j)] = o * cv.tanh();
                    }
                }
                cache.gates.push(a);
                cache.cells.push(c);
                cache.hidden.push(h);
            }
        }
        CellType::Gru => {
            for x in inputs {
                let h_prev = cache.hidden.last().expect("initial state");
                let mut a = &params.w * x;
                add_bias(&mut a, &params.b);
                let zr = params.u.rows(0, 2 * h_dim) * h_prev;
                for j in 0..batch {
                    for r in 0..2 * h_dim {
                        a[(r, j)] = sigmoid(a[(r, j)] + zr[(r, j)]);
                    }
                }
                let rh = a.rows(h_dim, h_dim).component_mul(h_prev);
                let un = params.u.rows(2 * h_dim, h_dim) * &rh;
                let mut h = DMatrix::zeros(h_dim, batch);
                for j in 0..batch {
                    for r in 0..h_dim {
                        let n = (a[(2 * h_dim + r, j)] + un[(r, j)]).tanh();
                        a[(2 * h_dim + r, j)] = n;
                        let z = a[(r, j)];
                        h[(r, j)] = (1.0 - z) * h_prev[(r, j)] + z * n;
                    }
                }
                cache.gates.push(a);
                cache.reset_hidden.push(rh);
                cache.hidden.push(h);
            }
        }
    }
    if let Some(head) = &params.pretrain_head {
        cache.pretrain_out = cache.hidden[1..].iter().map(|h| head.apply(h)).collect();
    }
    if let Some(head) = &params.task_head {
        let out = head.apply(&cache.hidden[k]);
        cache.task_out = Some(DVector::from_iterator(batch, out.row(0).iter().copied()));
    }
    Ok(cache)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskLoss {
    /// Binary cross-entropy on the logit, `softplus(s) - y s`.
    CrossEntropy,
    Mse,
}

/// What the batch is trained on.
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    Task { loss: TaskLoss, targets: &'a [f64] },
    /// Per-window targets (`|L| x batch`) and optional per-window, per-column weights (0 or 1).
    Pretrain {
        targets: &'a [DMatrix<f64>],
        mask: Option<&'a [Vec<bool>]>,
    },
}

/// Mean batch loss for a cached forward pass.
pub fn objective_loss(params: &RecurrentParams, cache: &ForwardCache, objective: &Objective) -> Result<f64> {
    Ok(output_gradients(params, cache, objective)?.0)
}

/// Loss and gradients with respect to head outputs.
fn output_gradients(
    params: &RecurrentParams,
    cache: &ForwardCache,
    objective: &Objective,
) -> Result<(f64, Option<Vec<DMatrix<f64>>>, Option<DVector<f64>>)> {
    let batch = cache.hidden[0].ncols();
    match objective {
        Objective::Task { loss, targets } => {
            let s = cache
                .task_out
                .as_ref()
                .ok_or_else(|| Error::Config("task objective needs a task head".into()))?;
            if targets.len() != batch {
                return Err(Error::Dimension(format!("{} targets for a batch of {batch}", targets.len())));
            }
            let n = batch as f64;
            let mut total = 0.0;
            let mut ds = DVector::zeros(batch);
            for j in 0..batch {
                let (sj, y) = (s[j], targets[j]);
                match loss {
                    TaskLoss::CrossEntropy => {
                        total += softplus(sj) - y * sj;
                        ds[j] = (sigmoid(sj) - y) / n;
                    }
                    TaskLoss::Mse => {
                        total += (sj - y).powi(2);
                        ds[j] = 2.0 * (sj - y) / n;
                    }
                }
            }
            Ok((total / n, None, Some(ds)))
        }
        Objective::Pretrain { targets, mask } => {
            let head = params
                .pretrain_head
                .as_ref()
                .ok_or_else(|| Error::Config("pretrain objective needs a pretrain head".into()))?;
            let k = cache.pretrain_out.len();
            if targets.len() != k {
                return Err(Error::Dimension(format!("{} target windows for {k} windows", targets.len())));
            }
            let out_dim = head.w.nrows();
            let weight = |t: usize, j: usize| mask.map_or(1.0, |m| if m[t][j] { 1.0 } else { 0.0 });
            let mut denom = 0.0;
            for t in 0..k {
                if targets[t].nrows() != out_dim || targets[t].ncols() != batch {
                    return Err(Error::Dimension("pretrain target shape".into()));
                }
                for j in 0..batch {
                    denom += weight(t, j) * out_dim as f64;
                }
            }
            let mut total = 0.0;
            let mut grads = Vec::with_capacity(k);
            for t in 0..k {
                let diff = &cache.pretrain_out[t] - &targets[t];
                let mut g = DMatrix::zeros(out_dim, batch);
                if denom > 0.0 {
                    for j in 0..batch {
                        let w = weight(t, j);
                        for r in 0..out_dim {
                            total += w * diff[(r, j)].powi(2);
                            g[(r, j)] = 2.0 * w * diff[(r, j)] / denom;
                        }
                    }
                }
                grads.push(g);
            }
            Ok((if denom > 0.0 { total / denom } else { 0.0 }, Some(grads), None))
        }
    }
}

/// Mean batch loss and its exact gradient for every parameter.
pub fn rnn_backward(
    params: &RecurrentParams,
    inputs: &[DMatrix<f64>],
    cache: &ForwardCache,
    objective: &Objective,
) -> Result<(f64, RecurrentParams)> {
    let (loss, d_pre, d_task) = output_gradients(params, cache, objective)?;
    if !loss.is_finite() {
        let max_h = cache.hidden.iter().flat_map(|h| h.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
        return Err(Error::Numeric(format!(
            "loss is {loss} (max |hidden| {max_h}, parameters finite: {})",
            params.is_finite()
        )));
    }
    let k = inputs.len();
    let h_dim = params.hidden_dim;
    let batch = cache.hidden[0].ncols();
    let mut grads = params.zeros_like();

    // gradient flowing into each hidden state from the heads
    let mut dh_out: Vec<DMatrix<f64>> = vec![DMatrix::zeros(h_dim, batch); k + 1];
    if let (Some(dy), Some(head)) = (&d_pre, &params.pretrain_head) {
        let gh = grads.pretrain_head.as_mut().expect("mirrors params");
        for t in 0..k {
            gh.w += &dy[t] * cache.hidden[t + 1].transpose();
            for j in 0..batch {
                gh.b += dy[t].column(j);
            }
            dh_out[t + 1] += head.w.transpose() * &dy[t];
        }
    }
    if let (Some(ds), Some(head)) = (&d_task, &params.task_head) {
        let gh = grads.task_head.as_mut().expect("mirrors params");
        let ds_row = ds.transpose();
        gh.w += &ds_row * cache.hidden[k].transpose();
        gh.b[0] += ds.sum();
        dh_out[k] += head.w.transpose() * &ds_row;
    }

    let mut dh_next = DMatrix::<f64>::zeros(h_dim, batch);
    match params.cell {
        CellType::Lstm => {
            let mut dc_next = DMatrix::<f64>::zeros(h_dim, batch);
            for t in (0..k).rev() {
                let a = &cache.gates[t];
                let c = &cache.cells[t + 1];
                let c_prev = &cache.cells[t];
                let dh = &dh_out[t + 1] + &dh_next;
                let mut da = DMatrix::zeros(4 * h_dim, batch);
                for j in 0..batch {
                    for r in 0..h_dim {
                        let (i, f, g, o) = (a[(r, j)], a[(h_dim + r, j)], a[(2 * h_dim + r, j)], a[(3 * h_dim + r, j)]);
                        let tc = c[(r, j)].tanh();
                        let dhv = dh[(r, j)];
                        let d_o = dhv * tc;
                        let dc = dc_next[(r, j)] + dhv * o * (1.0 - tc * tc);
                        da[(r, j)] = dc * g * i * (1.0 - i);
                        da[(h_dim + r, j)] = dc * c_prev[(r, j)] * f * (1.0 - f);
                        da[(2 * h_dim + r, j)] = dc * i * (1.0 - g * g);
                        da[(3 * h_dim + r, j)] = d_o * o * (1.0 - o);
                        dc_next[(r, j)] = dc * f;
                    }
                }
                grads.w += &da * inputs[t].transpose();
                grads.u += &da * cache.hidden[t].transpose();
                for j in 0..batch {
                    grads.b += da.column(j);
                }
                dh_next = params.u.transpose() * &da;
            }
        }
        CellType::Gru => {
            for t in (0..k).rev() {
                let a = &cache.gates[t];
                let h_prev = &cache.hidden[t];
                let rh = &cache.reset_hidden[t];
                let dh = &dh_out[t + 1] + &dh_next;
                let mut da = DMatrix::zeros(3 * h_dim, batch);
                let mut dh_prev = DMatrix::zeros(h_dim, batch);
                for j in 0..batch {
                    for r in 0..h_dim {
                        let (z, n) = (a[(r, j)], a[(2 * h_dim + r, j)]);
                        let dhv = dh[(r, j)];
                        da[(r, j)] = dhv * (n - h_prev[(r, j)]) * z * (1.0 - z);
                        da[(2 * h_dim + r, j)] = dhv * z * (1.0 - n * n);
                        dh_prev[(r, j)] = dhv * (1.0 - z);
                    }
                }
                let da_n = da.rows(2 * h_dim, h_dim).clone_owned();
                let d_rh = params.u.rows(2 * h_dim, h_dim).transpose() * &da_n;
                for j in 0..batch {
                    for r in 0..h_dim {
                        let rv = a[(h_dim + r, j)];
                        da[(h_dim + r, j)] = d_rh[(r, j)] * h_prev[(r, j)] * rv * (1.0 - rv);
                        dh_prev[(r, j)] += d_rh[(r, j)] * rv;
                    }
                }
                grads.w += &da * inputs[t].transpose();
                for j in 0..batch {
                    grads.b += da.column(j);
                }
                let da_zr = da.rows(0, 2 * h_dim);
                let mut gu_zr = grads.u.rows_mut(0, 2 * h_dim);
                gu_zr += da_zr * h_prev.transpose();
                let mut gu_n = grads.u.rows_mut(2 * h_dim, h_dim);
                gu_n += &da_n * rh.transpose();
                dh_prev += params.u.rows(0, 2 * h_dim).transpose() * da_zr;
                dh_next = dh_prev;
            }
        }
    }
    Ok((loss, grads))
}

/// Stack per-sample sequences (`[K][dim]`) into per-window matrices (`dim x batch`).
pub fn batch_matrices(sequences: &[&[Vec<f64>]]) -> Result<Vec<DMatrix<f64>>> {
    let Some(first) = sequences.first() else {
        return Ok(Vec::new());
    };
    let k = first.len();
    let dim = first.first().map_or(0, Vec::len);
    if sequences.iter().any(|s| s.len() != k || s.iter().any(|row| row.len() != dim)) {
        return Err(Error::Dimension("ragged sequences in batch".into()));
    }
    Ok((0..k)
        .map(|t| DMatrix::from_fn(dim, sequences.len(), |r, j| sequences[j][t][r]))
        .collect())
}

/// Rescale the gradient so its global norm is at most `max_norm`. Returns the norm before clipping.
pub fn clip_gradients(grads: &mut RecurrentParams, max_norm: f64) -> f64 {
    let norm = grads
        .tensors()
        .iter()
        .flat_map(|(_, t)| t.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for (_, t) in grads.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= scale);
        }
    }
    norm
}
