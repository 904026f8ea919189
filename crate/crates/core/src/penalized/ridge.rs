use nalgebra::{DMatrix, DVector};

use super::Design;
use crate::error::{Error, Result};

/// `argmin ||X b - y||^2 + ridge_lambda ||b||^2` via the normal equations.
pub fn ridge_fit(design: &Design, response: &[f64], ridge_lambda: f64) -> Result<Vec<f64>> {
    if !(ridge_lambda > 0.0 && ridge_lambda.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "ridge lambda {ridge_lambda} must be positive"
        )));
    }
    check_len(design, response)?;
    let p = design.n_cols();
    let gram = design.gram() + DMatrix::identity(p, p) * ridge_lambda;
    let rhs = design.tr_mul_dvec(&DVector::from_column_slice(response));
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Singular("ridge normal equations".into()))?;
    let beta = chol.solve(&rhs);
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("ridge solution is not finite".into()));
    }
    Ok(beta.iter().copied().collect())
}

/// `0.01 * trace(X^T X) / p`, a scale-aware default ridge penalty.
pub fn default_ridge_lambda(design: &Design) -> f64 {
    let p = design.n_cols().max(1);
    let trace: f64 = (0..design.n_cols()).map(|j| design.col_sq_norm(j)).sum();
    0.01 * trace / p as f64
}

#[derive(Debug, Clone)]
pub struct LeastSquaresFit {
    pub coefficients: Vec<f64>,
    /// `(max_i L_ii / min_i L_ii)^2` from the Cholesky factor of `X^T X`, a
    /// cheap lower bound on the condition number.
    pub condition_estimate: f64,
}

/// Ordinary least squares via Cholesky on `X^T X`.
pub fn least_squares(design: &Design, response: &[f64]) -> Result<LeastSquaresFit> {
    check_len(design, response)?;
    if design.n_cols() > design.n_rows() {
        return Err(Error::Singular(format!(
            "{} columns exceed {} rows",
            design.n_cols(),
            design.n_rows()
        )));
    }
    let gram = design.gram();
    let rhs = design.tr_mul_dvec(&DVector::from_column_slice(response));
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Singular("X^T X is not positive definite".into()))?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| {
        (lo.min(v.abs()), hi.max(v.abs()))
    });
    let condition_estimate = if lo > 0.0 {
        (hi / lo).powi(2)
    } else {
        f64::INFINITY
    };
    let beta = chol.solve(&rhs);
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular(
            "least-squares solution is not finite".into(),
        ));
    }
    Ok(LeastSquaresFit {
        coefficients: beta.iter().copied().collect(),
        condition_estimate,
    })
}

fn check_len(design: &Design, response: &[f64]) -> Result<()> {
    if design.n_rows() != response.len() {
        return Err(Error::Dimension(format!(
            "response has {} entries, design has {} rows",
            response.len(),
            design.n_rows()
        )));
    }
    Ok(())
}
