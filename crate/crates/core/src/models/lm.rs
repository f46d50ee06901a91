//! Ordinary least squares with a ridge fallback for rank-deficient designs.

use nalgebra::{DMatrix, DVector};

use super::glm::{inverse_with_jitter, LinearPredictor};
use crate::error::{Error, Result};
use crate::linalg::with_intercept;

#[derive(Debug, Clone, PartialEq)]
pub struct LmFit {
    pub model: LinearPredictor,
    pub residual_variance: f64,
    pub r_squared: f64,
    /// Ridge actually added to the normal equations (0 when the design is full rank).
    pub ridge_used: f64,
}

impl LmFit {
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.model.linear(row)
    }
}

/// Least squares with an optional fixed ridge on the non-intercept coefficients.
pub fn fit_lm_ridge(x: &DMatrix<f64>, y: &[f64], ridge: f64) -> Result<LmFit> {
    if x.nrows() < 1 {
        return Err(Error::Data("no observations".into()));
    }
    if x.nrows() != y.len() {
        return Err(Error::Dimension(format!("{} rows but {} targets", x.nrows(), y.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite value in regression data".into()));
    }
    let design = with_intercept(x);
    let p = design.ncols();
    let yv = DVector::from_column_slice(y);
    let gram = design.transpose() * &design;
    let rhs = design.tr_mul(&yv);
    let scale = (gram.trace() / p as f64).max(1e-300);

    let mut lambda = ridge;
    let mut solution = None;
    for attempt in 0..16 {
        let mut a = gram.clone();
        for i in 1..p {
            a[(i, i)] += lambda;
        }
        if let Some(chol) = a.clone().cholesky() {
            let beta = chol.solve(&rhs);
            // a numerically singular system can still factor; check the residual of the normal equations
            let check = &a * &beta - &rhs;
            if beta.iter().all(|v| v.is_finite()) && check.norm() <= 1e-6 * (rhs.norm() + 1.0) {
                solution = Some((beta, a));
                break;
            }
        }
        lambda = if attempt == 0 && lambda == 0.0 { scale * 1e-10 } else { lambda.max(scale * 1e-10) * 10.0 };
    }
    let (beta, a) = solution.ok_or_else(|| Error::Numeric("normal equations could not be solved".into()))?;

    let fitted = &design * &beta;
    let resid = &yv - &fitted;
    let rss = resid.norm_squared();
    let n = y.len() as f64;
    let mean = yv.mean();
    let tss: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let dof = (n - p as f64).max(1.0);
    let residual_variance = rss / dof;
    let covariance = inverse_with_jitter(&a).map(|inv| {
        if ridge > 0.0 {
            &inv * &gram * &inv * residual_variance
        } else {
            inv * residual_variance
        }
    });
    Ok(LmFit {
        model: LinearPredictor {
            intercept: beta[0],
            coefficients: beta.iter().skip(1).copied().collect(),
            covariance,
        },
        residual_variance,
        r_squared: if tss > 0.0 { 1.0 - rss / tss } else { 0.0 },
        ridge_used: lambda,
    })
}

pub fn fit_lm(x: &DMatrix<f64>, y: &[f64]) -> Result<LmFit> {
    fit_lm_ridge(x, y, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn exact_linear_data_is_interpolated() {
        let x = DMatrix::from_row_slice(5, 2, &[1.0, 2.0, 0.5, -1.0, 3.0, 0.0, -2.0, 1.5, 0.3, 0.7]);
        let y: Vec<f64> = (0..5).map(|i| 0.5 + 2.0 * x[(i, 0)] - 3.0 * x[(i, 1)]).collect();
        let fit = fit_lm(&x, &y).unwrap();
        assert!((fit.model.intercept - 0.5).abs() < 1e-8);
        assert!((fit.model.coefficients[0] - 2.0).abs() < 1e-8);
        assert!((fit.model.coefficients[1] + 3.0).abs() < 1e-8);
        assert_eq!(fit.ridge_used, 0.0);
    }

    #[test]
    fn pure_noise_has_near_zero_r_squared() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10_000;
        let x: Vec<f64> = (0..n * 5).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let fit = fit_lm(&DMatrix::from_row_slice(n, 5, &x), &y).unwrap();
        assert!(fit.r_squared < 0.02, "{}", fit.r_squared);
    }

    #[test]
    fn duplicated_column_uses_ridge_fallback() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 5.0, 5.0]);
        let fit = fit_lm(&x, &[1.0, 2.0, 2.5, 5.0]).unwrap();
        assert!(fit.ridge_used > 0.0);
        assert!(fit.model.coefficients.iter().all(|b| b.is_finite()));
    }

    #[test]
    fn empty_input_is_a_data_error() {
        assert!(matches!(fit_lm(&DMatrix::zeros(0, 2), &[]), Err(Error::Data(_))));
    }
}
