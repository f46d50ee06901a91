//! Dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// Solve `a x = b` for symmetric positive definite `a`.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    a.clone().cholesky().map(|c| c.solve(b))
}

/// Inverse of a symmetric positive definite matrix.
pub fn inverse_spd(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    a.clone().cholesky().map(cholesky_inverse)
}

/// `(L L^T)^{-1} = L^{-T} L^{-1}`.
pub fn cholesky_inverse(chol: Cholesky<f64, Dyn>) -> DMatrix<f64> {
    let l = chol.unpack();
    let n = l.nrows();
    let l_inv = l
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .expect("cholesky factor has a positive diagonal");
    l_inv.transpose() * &l_inv
}

/// `X^T diag(w) X` with `w >= 0`.
pub fn weighted_gram(x: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let mut scaled = x.clone();
    for (i, &wi) in w.iter().enumerate() {
        let s = wi.sqrt();
        scaled.row_mut(i).scale_mut(s);
    }
    scaled.transpose() * &scaled
}

/// Prepend a column of ones.
pub fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.clone().insert_column(0, 1.0)
}

/// Row-major nested vectors to a matrix.
pub fn matrix_from_rows(rows: &[Vec<f64>], n_cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), n_cols, |i, j| rows[i][j])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spd_solve_and_gram() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let g = weighted_gram(&x, &[1.0, 4.0, 1.0]);
        assert_eq!(g, DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 5.0]));
        let sol = solve_spd(&g, &DVector::from_vec(vec![3.0, 6.0])).unwrap();
        assert!((sol[0] - 1.0).abs() < 1e-12 && (sol[1] - 1.0).abs() < 1e-12);
        assert!(inverse_spd(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).is_none());
        assert_eq!(with_intercept(&x).column(0).sum(), 3.0);
    }
}
