//! Penalized least squares: ridge, box-constrained weighted lasso by cyclic
//! coordinate descent, lambda paths and k-fold cross-validation with the
//! one-standard-error rule.
//!
//! The lasso objective throughout is
//! `||X b + b0 - y||^2 + lambda * sum_j w_j |b_j|` subject to
//! `lower_j <= b_j <= upper_j`; an infinite `w_j` pins `b_j` to zero.

mod cd;
mod cv;
mod design;
mod kkt;
mod ridge;

pub use cd::{fit_path, lambda_grid, lambda_grid_with, lasso_cd, lasso_cd_with};
pub use cv::{
    cross_validate, cross_validate_refit, cross_validate_with, random_folds, CvOptions, CvResult,
    FoldWeights,
};
pub use design::{Column, Design};
pub use kkt::kkt_residual;
pub use ridge::{default_ridge_lambda, least_squares, ridge_fit, LeastSquaresFit};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of grid points in a default lambda path.
pub const N_LAMBDA: usize = 100;
/// Ratio between the smallest and largest lambda of a default path.
pub const LAMBDA_MIN_RATIO: f64 = 1e-3;
/// Path ratio used by the two estimation steps; the shallower default
/// path stops before the cross-validation minimum on simulated panels.
pub const ESTIMATION_LAMBDA_MIN_RATIO: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct PenalizedProblem {
    pub design: Design,
    pub response: Vec<f64>,
    pub penalty_weights: Vec<f64>,
    pub lower_bounds: Vec<f64>,
    pub upper_bounds: Vec<f64>,
    pub intercept: bool,
}

impl PenalizedProblem {
    /// Unit penalty weights, no bounds, no intercept.
    pub fn new(design: Design, response: Vec<f64>) -> Result<Self> {
        let p = design.n_cols();
        let problem = Self {
            design,
            response,
            penalty_weights: vec![1.0; p],
            lower_bounds: vec![f64::NEG_INFINITY; p],
            upper_bounds: vec![f64::INFINITY; p],
            intercept: false,
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn with_penalty_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        self.penalty_weights = weights;
        self.validate()?;
        Ok(self)
    }

    pub fn with_bounds(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        self.lower_bounds = lower;
        self.upper_bounds = upper;
        self.validate()?;
        Ok(self)
    }

    pub fn with_intercept(mut self, intercept: bool) -> Self {
        self.intercept = intercept;
        self
    }

    pub fn n_rows(&self) -> usize {
        self.design.n_rows()
    }

    pub fn n_cols(&self) -> usize {
        self.design.n_cols()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.design.n_cols();
        if self.response.len() != self.design.n_rows() {
            return Err(Error::Dimension(format!(
                "response has {} entries, design has {} rows",
                self.response.len(),
                self.design.n_rows()
            )));
        }
        if self.penalty_weights.len() != p
            || self.lower_bounds.len() != p
            || self.upper_bounds.len() != p
        {
            return Err(Error::Dimension(
                "penalty weights and bounds need one entry per column".into(),
            ));
        }
        if self.response.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("response must be finite".into()));
        }
        if self.penalty_weights.iter().any(|w| w.is_nan() || *w < 0.0) {
            return Err(Error::InvalidInput("penalty weights must be >= 0".into()));
        }
        for j in 0..p {
            let (lo, hi) = (self.lower_bounds[j], self.upper_bounds[j]);
            if lo.is_nan() || hi.is_nan() || lo > 0.0 || hi < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "bounds [{lo}, {hi}] of column {j} must contain 0"
                )));
            }
        }
        Ok(())
    }

    /// Objective value at `(coefficients, intercept)` for a given lambda.
    pub fn objective(&self, lambda: f64, coefficients: &[f64], intercept: f64) -> f64 {
        let fitted = self.design.mul_vec(coefficients);
        let rss: f64 = fitted
            .iter()
            .zip(&self.response)
            .map(|(f, y)| (y - f - intercept).powi(2))
            .sum();
        rss + lambda * penalty(&self.penalty_weights, coefficients)
    }
}

pub(crate) fn penalty(weights: &[f64], beta: &[f64]) -> f64 {
    weights
        .iter()
        .zip(beta)
        .filter(|(_, b)| **b != 0.0)
        .map(|(w, b)| w * b.abs())
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoFit {
    pub coefficients: Vec<f64>,
    pub intercept_value: f64,
    pub lambda: f64,
    pub objective: f64,
    /// Coordinate-descent sweeps, full and active-set.
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Stop when the largest coefficient change of a full sweep, measured on
    /// unit-norm columns, is below `tol * max(1, max |b_j| ||x_j||)`.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_sweeps: 100_000,
        }
    }
}

/// `clip(sign(z) * max(|z| - threshold, 0), lo, hi)`
pub fn soft_threshold_clip(z: f64, threshold: f64, lo: f64, hi: f64) -> f64 {
    let shrunk = if z > threshold {
        z - threshold
    } else if z < -threshold {
        z + threshold
    } else {
        0.0
    };
    shrunk.clamp(lo, hi)
}
