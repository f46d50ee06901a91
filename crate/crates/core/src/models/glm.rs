//! Ridge-penalised logistic regression fitted by IRLS (Newton) with step
//! halving, plus Wald inference on the fitted coefficients.
//!
//! The penalty `ridge / 2 * |beta|^2` never touches the intercept.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{weighted_gram, with_intercept};
use crate::stats::two_sided_normal_p;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticOptions {
    pub ridge: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        LogisticOptions {
            ridge: 1e-4,
            max_iter: 100,
            tol: 1e-10,
        }
    }
}

/// Fitted linear predictor with its coefficient covariance.
///
/// `covariance` is indexed `[intercept, coefficient_0, ..]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPredictor {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    #[serde(skip)]
    pub covariance: Option<DMatrix<f64>>,
}

impl LinearPredictor {
    pub fn linear(&self, row: &[f64]) -> f64 {
        self.intercept + row.iter().zip(&self.coefficients).map(|(x, b)| x * b).sum::<f64>()
    }

    /// Standard error of coefficient `j` (not the intercept).
    pub fn standard_error(&self, j: usize) -> Option<f64> {
        self.covariance.as_ref().map(|c| c[(j + 1, j + 1)].max(0.0).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub model: LinearPredictor,
    /// Penalised negative log-likelihood after each accepted step, starting
    /// with the initial point.
    pub loss_trace: Vec<f64>,
    pub converged: bool,
}

impl LogisticFit {
    pub fn predict_proba(&self, row: &[f64]) -> f64 {
        sigmoid(self.model.linear(row))
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn check_inputs(x: &DMatrix<f64>, y: &[f64]) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::Data("no observations".into()));
    }
    if x.nrows() != y.len() {
        return Err(Error::Dimension(format!("{} rows but {} labels", x.nrows(), y.len())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite predictor".into()));
    }
    Ok(())
}

fn penalised_loss(eta: &DVector<f64>, y: &[f64], theta: &DVector<f64>, ridge: f64) -> f64 {
    let nll: f64 = eta.iter().zip(y).map(|(&e, &yi)| softplus(e) - yi * e).sum();
    nll + 0.5 * ridge * theta.rows(1, theta.len() - 1).norm_squared()
}

/// Ridge logistic regression of binary `y` (0/1) on `x` with optional offset
/// and warm start (`[intercept, coefficients..]`).
pub fn fit_logistic_with(
    x: &DMatrix<f64>,
    y: &[f64],
    offset: Option<&[f64]>,
    init: Option<&[f64]>,
    options: &LogisticOptions,
) -> Result<LogisticFit> {
    check_inputs(x, y)?;
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Data("logistic labels must be 0 or 1".into()));
    }
    let positives = y.iter().filter(|&&v| v == 1.0).count();
    if positives == 0 || positives == y.len() {
        return Err(Error::DegenerateFit("labels contain a single class".into()));
    }
    let design = with_intercept(x);
    let p = design.ncols();
    let offset = DVector::from_iterator(y.len(), (0..y.len()).map(|i| offset.map_or(0.0, |o| o[i])));
    let mut theta = match init {
        Some(v) if v.len() == p => DVector::from_column_slice(v),
        Some(v) => return Err(Error::Dimension(format!("warm start has {} values, expected {p}", v.len()))),
        None => DVector::zeros(p),
    };
    let mut penalty = DMatrix::identity(p, p) * options.ridge;
    penalty[(0, 0)] = 0.0;

    let mut eta = &design * &theta + &offset;
    let mut loss = penalised_loss(&eta, y, &theta, options.ridge);
    let mut trace = vec![loss];
    let mut converged = false;
    let mut hessian = DMatrix::zeros(p, p);
    for _ in 0..options.max_iter {
        let mu: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
        let w: Vec<f64> = mu.iter().map(|m| m * (1.0 - m)).collect();
        let resid = DVector::from_iterator(y.len(), y.iter().zip(&mu).map(|(yi, m)| yi - m));
        let mut grad = design.tr_mul(&resid);
        grad -= &penalty * &theta;
        hessian = weighted_gram(&design, &w) + &penalty;
        let step = solve_with_jitter(&hessian, &grad)
            .ok_or_else(|| Error::Numeric("logistic Hessian is not positive definite".into()))?;

        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let candidate = &theta + &step * scale;
            let cand_eta = &design * &candidate + &offset;
            let cand_loss = penalised_loss(&cand_eta, y, &candidate, options.ridge);
            if cand_loss.is_finite() && cand_loss <= loss {
                accepted = Some((candidate, cand_eta, cand_loss));
                break;
            }
            scale *= 0.5;
        }
        let Some((next, next_eta, next_loss)) = accepted else {
            converged = true;
            break;
        };
        let change = loss - next_loss;
        let max_step = (&next - &theta).amax();
        theta = next;
        eta = next_eta;
        loss = next_loss;
        trace.push(loss);
        if change <= options.tol * (1.0 + loss.abs()) || max_step < options.tol {
            converged = true;
            break;
        }
    }
    // covariance at the final point
    let mu: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
    let w: Vec<f64> = mu.iter().map(|m| m * (1.0 - m)).collect();
    let information = weighted_gram(&design, &w);
    if trace.len() > 1 || hessian.iter().all(|&v| v == 0.0) {
        hessian = &information + &penalty;
    }
    // sandwich form: sampling covariance of the penalised estimator
    let covariance = inverse_with_jitter(&hessian).map(|inv| {
        if options.ridge > 0.0 {
            &inv * &information * &inv
        } else {
            inv
        }
    });
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("logistic coefficients diverged".into()));
    }
    Ok(LogisticFit {
        model: LinearPredictor {
            intercept: theta[0],
            coefficients: theta.iter().skip(1).copied().collect(),
            covariance,
        },
        loss_trace: trace,
        converged,
    })
}

pub fn fit_logistic(x: &DMatrix<f64>, y: &[f64], options: &LogisticOptions) -> Result<LogisticFit> {
    fit_logistic_with(x, y, None, None, options)
}

pub(crate) fn solve_with_jitter(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let scale = (a.trace() / a.nrows() as f64).abs().max(1e-300);
    let mut jitter = 0.0;
    for _ in 0..12 {
        let mut m = a.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
        if let Some(chol) = m.cholesky() {
            return Some(chol.solve(b));
        }
        jitter = if jitter == 0.0 { scale * 1e-12 } else { jitter * 100.0 };
    }
    None
}

pub(crate) fn inverse_with_jitter(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let scale = (a.trace() / a.nrows() as f64).abs().max(1e-300);
    let mut jitter = 0.0;
    for _ in 0..12 {
        let mut m = a.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
        if let Some(chol) = m.cholesky() {
            return Some(crate::linalg::cholesky_inverse(chol));
        }
        jitter = if jitter == 0.0 { scale * 1e-12 } else { jitter * 100.0 };
    }
    None
}

/// Binary-outcome generalised linear model (logit link).
#[derive(Debug, Clone, PartialEq)]
pub struct GlmFit {
    pub model: LinearPredictor,
    pub converged: bool,
}

impl GlmFit {
    pub fn predict_proba(&self, row: &[f64]) -> f64 {
        sigmoid(self.model.linear(row))
    }

    pub fn standard_errors(&self) -> Vec<f64> {
        (0..self.model.coefficients.len())
            .map(|j| self.model.standard_error(j).unwrap_or(f64::NAN))
            .collect()
    }
}

pub fn fit_glm(x: &DMatrix<f64>, y: &[f64], ridge: f64) -> Result<GlmFit> {
    let fit = fit_logistic(x, y, &LogisticOptions { ridge, ..LogisticOptions::default() })?;
    Ok(GlmFit {
        model: fit.model,
        converged: fit.converged,
    })
}

/// Two-sided Wald p-values for the requested coefficients (0-based, intercept excluded).
pub fn wald_pvalues(model: &LinearPredictor, indices: &[usize]) -> Result<Vec<f64>> {
    let covariance = model
        .covariance
        .as_ref()
        .ok_or_else(|| Error::Data("model carries no coefficient covariance".into()))?;
    indices
        .iter()
        .map(|&j| {
            if j >= model.coefficients.len() {
                return Err(Error::Index(format!(
                    "coefficient {j} of {}",
                    model.coefficients.len()
                )));
            }
            let se = covariance[(j + 1, j + 1)].max(0.0).sqrt();
            let z = if se > 0.0 { model.coefficients[j] / se } else { 0.0 };
            Ok(two_sided_normal_p(z))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn known_logistic_model_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let truth = [-0.5, 1.0, -2.0, 0.5];
        let n = 100_000;
        let mut rows = Vec::with_capacity(n * 3);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let x: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
            let eta = truth[0] + truth[1] * x[0] + truth[2] * x[1] + truth[3] * x[2];
            y.push(if rng.gen::<f64>() < sigmoid(eta) { 1.0 } else { 0.0 });
            rows.extend_from_slice(&x);
        }
        let x = DMatrix::from_row_slice(n, 3, &rows);
        let fit = fit_glm(&x, &y, 1e-6).unwrap();
        assert!(fit.converged);
        let se0 = fit.model.covariance.as_ref().unwrap()[(0, 0)].sqrt();
        assert!((fit.model.intercept - truth[0]).abs() < 3.0 * se0);
        for (j, se) in fit.standard_errors().iter().enumerate() {
            assert!((fit.model.coefficients[j] - truth[j + 1]).abs() < 3.0 * se);
        }
    }

    #[test]
    fn zero_column_gets_zero_coefficient() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, -1.0, 0.0, 2.0, 0.0, -0.5, 0.0]);
        let y = [1.0, 0.0, 0.0, 1.0];
        for ridge in [1e-6, 1.0, 100.0] {
            let fit = fit_glm(&x, &y, ridge).unwrap();
            assert_eq!(fit.model.coefficients[1], 0.0);
        }
    }

    #[test]
    fn irls_loss_decreases_monotonically_on_separable_points() {
        let x = DMatrix::from_row_slice(2, 1, &[-1.0, 1.0]);
        let fit = fit_logistic(&x, &[0.0, 1.0], &LogisticOptions { ridge: 1e-3, ..Default::default() }).unwrap();
        assert!(fit.loss_trace.len() > 2);
        for w in fit.loss_trace.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn single_class_is_degenerate() {
        let x = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        assert!(matches!(fit_glm(&x, &[1.0, 1.0, 1.0], 1.0), Err(Error::DegenerateFit(_))));
    }

    #[test]
    fn non_finite_predictor_is_rejected() {
        let x = DMatrix::from_row_slice(2, 1, &[f64::NAN, 2.0]);
        assert!(matches!(fit_glm(&x, &[0.0, 1.0], 1.0), Err(Error::Data(_))));
    }

    #[test]
    fn wald_values() {
        let mut cov = DMatrix::identity(3, 3);
        cov[(2, 2)] = 1.0;
        let model = LinearPredictor {
            intercept: 0.0,
            coefficients: vec![0.0, 1.959_963_984_540_054],
            covariance: Some(cov),
        };
        let p = wald_pvalues(&model, &[0, 1]).unwrap();
        assert_eq!(p[0], 1.0);
        assert!((p[1] - 0.05).abs() < 1e-3);
        assert!(matches!(wald_pvalues(&model, &[2]), Err(Error::Index(_))));
    }

    #[test]
    fn penalised_null_pvalues_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut pvalues = Vec::new();
        for _ in 0..150 {
            let n = 200;
            let x = DMatrix::from_fn(n, 4, |_, _| StandardNormal.sample(&mut rng));
            let y: Vec<f64> = (0..n).map(|i| if rng.gen::<f64>() < sigmoid(0.8 * x[(i, 0)]) { 1.0 } else { 0.0 }).collect();
            let fit = fit_glm(&x, &y, 10.0).unwrap();
            pvalues.extend(wald_pvalues(&fit.model, &[1, 2, 3]).unwrap());
        }
        assert!(crate::stats::ks_uniform(&pvalues) > 0.01);
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0 && softplus(-1000.0) < 1e-300);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    }
}
