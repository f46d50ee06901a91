//! Propensity model `P(Z = 1 | X)` for one comparable group pair.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::glm::{fit_logistic, sigmoid, LogisticOptions};

/// Smallest and largest probability a propensity model reports.
pub const MIN_PROB: f64 = f64::MIN_POSITIVE;
pub const MAX_PROB: f64 = 1.0 - f64::EPSILON / 2.0;

pub const DEFAULT_PROPENSITY_RIDGE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    /// Standard errors of `coefficients`.
    pub standard_errors: Vec<f64>,
    /// Group pair key the model was fitted on, empty when fitted ad hoc.
    pub fitted_on: String,
}

impl PropensityModel {
    pub fn linear(&self, x: &[f64]) -> f64 {
        self.intercept + x.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Probability in the open unit interval.
    pub fn predict(&self, x: &[f64]) -> f64 {
        sigmoid(self.linear(x)).clamp(MIN_PROB, MAX_PROB)
    }
}

/// Ridge logistic fit of `z` (0/1) on `x`. Columns are standardised for the
/// fit and the coefficients mapped back to the original scale; constant
/// columns get a zero coefficient.
pub fn fit_propensity(x: &DMatrix<f64>, z: &[f64], ridge: f64) -> Result<PropensityModel> {
    if x.nrows() != z.len() {
        return Err(Error::Dimension(format!("{} rows but {} labels", x.nrows(), z.len())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite propensity predictor".into()));
    }
    let treated = z.iter().filter(|&&v| v == 1.0).count();
    if treated < 2 || z.len() - treated < 2 {
        return Err(Error::DegenerateFit(format!(
            "propensity needs two members per class, got {treated} treated of {}",
            z.len()
        )));
    }
    let n = x.nrows() as f64;
    let mut means = Vec::with_capacity(x.ncols());
    let mut scales = Vec::with_capacity(x.ncols());
    for col in x.column_iter() {
        let m = col.sum() / n;
        let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
        means.push(m);
        scales.push(if sd > 1e-12 * m.abs().max(1.0) { sd } else { 0.0 });
    }
    let std_x = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
        if scales[j] > 0.0 {
            (x[(i, j)] - means[j]) / scales[j]
        } else {
            0.0
        }
    });
    let fit = fit_logistic(&std_x, z, &LogisticOptions { ridge, ..LogisticOptions::default() })?;
    let model = fit.model;
    let mut intercept = model.intercept;
    let mut coefficients = vec![0.0; x.ncols()];
    let mut standard_errors = vec![0.0; x.ncols()];
    for j in 0..x.ncols() {
        if scales[j] > 0.0 {
            coefficients[j] = model.coefficients[j] / scales[j];
            intercept -= coefficients[j] * means[j];
            standard_errors[j] = model.standard_error(j).unwrap_or(f64::NAN) / scales[j];
        }
    }
    Ok(PropensityModel {
        intercept,
        coefficients,
        standard_errors,
        fitted_on: String::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::glm::softplus;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn coin_flip_assignment_gives_null_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 10_000;
        let rows: Vec<f64> = (0..n * 3).map(|_| StandardNormal.sample(&mut rng)).collect();
        let z: Vec<f64> = (0..n).map(|_| if rng.gen::<bool>() { 1.0 } else { 0.0 }).collect();
        let m = fit_propensity(&DMatrix::from_row_slice(n, 3, &rows), &z, DEFAULT_PROPENSITY_RIDGE).unwrap();
        for (b, se) in m.coefficients.iter().zip(&m.standard_errors) {
            assert!(b.abs() < 3.0 * se, "{b} vs se {se}");
        }
    }

    #[test]
    fn mirrored_data_has_zero_intercept() {
        let pts = [[0.3, 1.2], [-0.7, 0.4], [1.5, -0.2], [0.1, 0.9]];
        let mut rows = Vec::new();
        let mut z = Vec::new();
        for p in pts {
            rows.extend_from_slice(&p);
            z.push(1.0);
            rows.extend_from_slice(&[-p[0], -p[1]]);
            z.push(0.0);
        }
        let m = fit_propensity(&DMatrix::from_row_slice(8, 2, &rows), &z, 1e-4).unwrap();
        assert!(m.intercept.abs() < 1e-8, "{}", m.intercept);
    }

    #[test]
    fn separable_points_stay_finite_with_small_loss() {
        let x = DMatrix::from_row_slice(4, 1, &[-2.0, -1.0, 1.0, 2.0]);
        let z = [0.0, 0.0, 1.0, 1.0];
        let m = fit_propensity(&x, &z, 1e-4).unwrap();
        assert!(m.coefficients[0].is_finite() && m.intercept.is_finite());
        let loss: f64 = (0..4)
            .map(|i| {
                let eta = m.linear(&[x[(i, 0)]]);
                softplus(eta) - z[i] * eta
            })
            .sum::<f64>()
            / 4.0;
        assert!(loss < 0.1, "{loss}");
        // independent reference: plain gradient descent on the same penalised objective
        // reaches a loss no lower than IRLS
        let (mut b0, mut b1) = (0.0f64, 0.0f64);
        let sd = (2.5f64).sqrt();
        for _ in 0..200_000 {
            let (mut g0, mut g1) = (0.0, 0.0);
            for i in 0..4 {
                let xs = x[(i, 0)] / sd;
                let r = z[i] - sigmoid(b0 + b1 * xs);
                g0 += r;
                g1 += r * xs;
            }
            b0 += 0.5 * g0;
            b1 += 0.5 * (g1 - 1e-4 * b1);
        }
        let reference: f64 = (0..4)
            .map(|i| {
                let eta = b0 + b1 * x[(i, 0)] / sd;
                softplus(eta) - z[i] * eta
            })
            .sum::<f64>()
            / 4.0;
        assert!(loss <= reference + 1e-6);
    }

    #[test]
    fn predictions_are_interior_and_errors_are_typed() {
        let m = PropensityModel {
            intercept: 1e6,
            coefficients: vec![],
            standard_errors: vec![],
            fitted_on: String::new(),
        };
        let p = m.predict(&[]);
        assert!(p > 0.0 && p < 1.0);
        let x = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        assert!(matches!(fit_propensity(&x, &[1.0, 0.0, 0.0], 1e-4), Err(Error::DegenerateFit(_))));
        let bad = DMatrix::from_row_slice(4, 1, &[1.0, f64::INFINITY, 3.0, 4.0]);
        assert!(matches!(fit_propensity(&bad, &[1.0, 1.0, 0.0, 0.0], 1e-4), Err(Error::Data(_))));
    }
}
