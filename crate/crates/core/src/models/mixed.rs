//! Random-intercept models (one intercept per patient) fitted by alternating
//! penalised updates.
//!
//! Fixed effects are refitted with the current intercepts as an offset, each
//! intercept is the mode of its Gaussian-penalised group likelihood, and the
//! intercept variance comes from the method of moments on one-step
//! unpenalised intercept estimates: `sigma^2 = mean(u~^2) - mean(1 / H)`,
//! where `H` is the group's information about its own intercept. This is an
//! approximation, not restricted maximum likelihood.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::glm::{fit_logistic_with, sigmoid, LinearPredictor, LogisticOptions};
use super::lm::fit_lm_ridge;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Binomial,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedOptions {
    pub ridge: f64,
    /// Hold the intercept variance fixed instead of estimating it.
    pub fixed_variance: Option<f64>,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for MixedOptions {
    fn default() -> Self {
        MixedOptions {
            ridge: 1e-4,
            fixed_variance: None,
            max_iter: 200,
            tol: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedFit {
    pub family: Family,
    pub model: LinearPredictor,
    pub intercepts: BTreeMap<u64, f64>,
    pub variance: f64,
    /// Gaussian family only.
    pub residual_variance: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl MixedFit {
    /// Unknown patients get a zero random intercept.
    pub fn linear(&self, row: &[f64], patient_id: Option<u64>) -> f64 {
        let u = patient_id.and_then(|id| self.intercepts.get(&id)).copied().unwrap_or(0.0);
        self.model.linear(row) + u
    }

    /// Probability (binomial) or mean (gaussian).
    pub fn predict(&self, row: &[f64], patient_id: Option<u64>) -> f64 {
        let eta = self.linear(row, patient_id);
        match self.family {
            Family::Binomial => sigmoid(eta),
            Family::Gaussian => eta,
        }
    }
}

fn group_index(groups: &[u64]) -> (Vec<u64>, Vec<usize>) {
    let mut ids: Vec<u64> = groups.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let idx = groups.iter().map(|g| ids.binary_search(g).expect("present")).collect();
    (ids, idx)
}

pub fn fit_random_intercept(
    x: &DMatrix<f64>,
    y: &[f64],
    groups: &[u64],
    family: Family,
    options: &MixedOptions,
) -> Result<MixedFit> {
    if groups.len() != y.len() || x.nrows() != y.len() {
        return Err(Error::Dimension(format!(
            "{} rows, {} targets, {} group labels",
            x.nrows(),
            y.len(),
            groups.len()
        )));
    }
    let (ids, gidx) = group_index(groups);
    if ids.len() < 2 {
        return Err(Error::Data("random intercepts need at least two patients".into()));
    }
    if let Some(v) = options.fixed_variance {
        if !(v >= 0.0) {
            return Err(Error::Config(format!("intercept variance must be non-negative, got {v}")));
        }
    }
    match family {
        Family::Binomial => fit_binomial(x, y, &ids, &gidx, options),
        Family::Gaussian => fit_gaussian(x, y, &ids, &gidx, options),
    }
}

fn fit_binomial(
    x: &DMatrix<f64>,
    y: &[f64],
    ids: &[u64],
    gidx: &[usize],
    options: &MixedOptions,
) -> Result<MixedFit> {
    let n_groups = ids.len();
    let mut u = vec![0.0; n_groups];
    let mut sigma2 = options.fixed_variance.unwrap_or(1.0);
    let mut theta: Option<Vec<f64>> = None;
    let mut model = None;
    let mut converged = false;
    let mut iterations = 0;
    let inner = LogisticOptions {
        ridge: options.ridge,
        max_iter: 3,
        tol: 1e-12,
    };
    for it in 0..options.max_iter {
        iterations = it + 1;
        let offset: Vec<f64> = gidx.iter().map(|&g| u[g]).collect();
        let fit = fit_logistic_with(x, y, Some(&offset), theta.as_deref(), &inner)?;
        let new_theta: Vec<f64> = std::iter::once(fit.model.intercept)
            .chain(fit.model.coefficients.iter().copied())
            .collect();
        let theta_change = theta.as_ref().map_or(f64::INFINITY, |old| {
            old.iter().zip(&new_theta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        });
        let fixed_eta: Vec<f64> = (0..y.len()).map(|i| {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            fit.model.linear(&row)
        }).collect();

        // intercept modes and their one-step unpenalised counterparts
        let mut info = vec![0.0; n_groups];
        let mut score = vec![0.0; n_groups];
        let mut u_change: f64 = 0.0;
        for _ in 0..50 {
            info.iter_mut().for_each(|v| *v = 0.0);
            score.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..y.len() {
                let g = gidx[i];
                let mu = sigmoid(fixed_eta[i] + u[g]);
                score[g] += y[i] - mu;
                info[g] += mu * (1.0 - mu);
            }
            let mut step_max: f64 = 0.0;
            for g in 0..n_groups {
                let next = if sigma2 > 0.0 {
                    u[g] + (score[g] - u[g] / sigma2) / (info[g] + 1.0 / sigma2)
                } else {
                    0.0
                };
                step_max = step_max.max((next - u[g]).abs());
                u_change = u_change.max((next - u[g]).abs());
                u[g] = next;
            }
            if step_max < 1e-10 {
                break;
            }
        }
        if options.fixed_variance.is_none() {
            let mut sq = 0.0;
            let mut inv_info = 0.0;
            for g in 0..n_groups {
                let h = info[g].max(1e-8);
                let raw = u[g] + score[g] / h;
                sq += raw * raw;
                inv_info += 1.0 / h;
            }
            let next = (sq / n_groups as f64 - inv_info / n_groups as f64).max(0.0);
            let var_change = (next - sigma2).abs();
            sigma2 = next;
            model = Some(fit.model);
            theta = Some(new_theta);
            if var_change < options.tol * (1.0 + sigma2) && theta_change < options.tol.sqrt() {
                converged = true;
                break;
            }
        } else {
            model = Some(fit.model);
            theta = Some(new_theta);
            if theta_change < options.tol && u_change < options.tol {
                converged = true;
                break;
            }
        }
    }
    Ok(MixedFit {
        family: Family::Binomial,
        model: model.expect("at least one iteration"),
        intercepts: ids.iter().copied().zip(u).collect(),
        variance: sigma2,
        residual_variance: f64::NAN,
        iterations,
        converged,
    })
}

fn fit_gaussian(
    x: &DMatrix<f64>,
    y: &[f64],
    ids: &[u64],
    gidx: &[usize],
    options: &MixedOptions,
) -> Result<MixedFit> {
    let n_groups = ids.len();
    let mut counts = vec![0.0; n_groups];
    for &g in gidx {
        counts[g] += 1.0;
    }
    let mut u = vec![0.0; n_groups];
    let mut sigma2 = options.fixed_variance.unwrap_or(1.0);
    let mut model = None;
    let mut residual_variance = 1.0;
    let mut converged = false;
    let mut iterations = 0;
    let mut previous: Option<Vec<f64>> = None;
    for it in 0..options.max_iter {
        iterations = it + 1;
        let shifted: Vec<f64> = y.iter().zip(gidx).map(|(v, &g)| v - u[g]).collect();
        let fit = fit_lm_ridge(x, &shifted, options.ridge)?;
        let resid: Vec<f64> = (0..y.len())
            .map(|i| {
                let row: Vec<f64> = x.row(i).iter().copied().collect();
                y[i] - fit.predict(&row)
            })
            .collect();
        let mut sums = vec![0.0; n_groups];
        for (r, &g) in resid.iter().zip(gidx) {
            sums[g] += r;
        }
        for g in 0..n_groups {
            u[g] = if sigma2 > 0.0 { sums[g] / (counts[g] + residual_variance / sigma2) } else { 0.0 };
        }
        let rss: f64 = resid.iter().zip(gidx).map(|(r, &g)| (r - u[g]).powi(2)).sum();
        residual_variance = (rss / (y.len() as f64 - x.ncols() as f64 - 1.0).max(1.0)).max(1e-12);
        if options.fixed_variance.is_none() {
            let mut sq = 0.0;
            let mut noise = 0.0;
            for g in 0..n_groups {
                let raw = sums[g] / counts[g];
                sq += raw * raw;
                noise += residual_variance / counts[g];
            }
            sigma2 = ((sq - noise) / n_groups as f64).max(0.0);
        }
        let current: Vec<f64> = std::iter::once(fit.model.intercept)
            .chain(fit.model.coefficients.iter().copied())
            .chain([sigma2])
            .collect();
        let change = previous.as_ref().map_or(f64::INFINITY, |old| {
            old.iter().zip(&current).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        });
        previous = Some(current);
        model = Some(fit.model);
        if change < options.tol {
            converged = true;
            break;
        }
    }
    Ok(MixedFit {
        family: Family::Gaussian,
        model: model.expect("at least one iteration"),
        intercepts: ids.iter().copied().zip(u).collect(),
        variance: sigma2,
        residual_variance,
        iterations,
        converged,
    })
}
