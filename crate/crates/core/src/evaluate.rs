//! Recovery metrics comparing an estimate with simulation truth.
//!
//! Rates that have an empty denominator are `None` rather than NaN.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricOptions {
    /// Entries of the estimate with `|w| <= threshold` count as zero.
    pub threshold: f64,
    /// Use `|Z(w_hat)| / |Z(w)|` for specificity instead of the intersection
    /// numerator. Can exceed 1.
    pub literal_specificity: bool,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            threshold: 0.0,
            literal_specificity: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub specificity: Option<f64>,
    pub sensitivity: Option<f64>,
    pub weight_bias: f64,
    pub mean_bias: f64,
    pub fitted_rmse: f64,
    pub weight_mae: f64,
}

fn check_square(w_true: &DMatrix<f64>, w_hat: &DMatrix<f64>) -> Result<usize> {
    let n = w_true.nrows();
    if !w_true.is_square() || w_true.shape() != w_hat.shape() {
        return Err(Error::Dimension(format!(
            "weights shapes {:?} and {:?} differ or are not square",
            w_true.shape(),
            w_hat.shape()
        )));
    }
    Ok(n)
}

fn check_same(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn off_diagonal(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
}

pub fn specificity_with(
    w_true: &DMatrix<f64>,
    w_hat: &DMatrix<f64>,
    opts: &MetricOptions,
) -> Result<Option<f64>> {
    let n = check_square(w_true, w_hat)?;
    let zero_hat = |i, j| f64::abs(w_hat[(i, j)]) <= opts.threshold;
    let (mut truth, mut hit, mut est) = (0usize, 0usize, 0usize);
    for (i, j) in off_diagonal(n) {
        let z = w_true[(i, j)] == 0.0;
        truth += z as usize;
        est += zero_hat(i, j) as usize;
        hit += (z && zero_hat(i, j)) as usize;
    }
    if truth == 0 {
        return Ok(None);
    }
    let num = if opts.literal_specificity { est } else { hit };
    Ok(Some(num as f64 / truth as f64))
}

/// Share of true zero off-diagonal links that are zero in the estimate.
pub fn specificity(w_true: &DMatrix<f64>, w_hat: &DMatrix<f64>) -> Result<Option<f64>> {
    specificity_with(w_true, w_hat, &MetricOptions::default())
}

pub fn sensitivity_with(
    w_true: &DMatrix<f64>,
    w_hat: &DMatrix<f64>,
    opts: &MetricOptions,
) -> Result<Option<f64>> {
    let n = check_square(w_true, w_hat)?;
    let (mut truth, mut hit) = (0usize, 0usize);
    for (i, j) in off_diagonal(n) {
        if w_true[(i, j)] != 0.0 {
            truth += 1;
            hit += (w_hat[(i, j)].abs() > opts.threshold) as usize;
        }
    }
    Ok((truth > 0).then(|| hit as f64 / truth as f64))
}

/// Share of true positive off-diagonal links that are nonzero in the estimate.
pub fn sensitivity(w_true: &DMatrix<f64>, w_hat: &DMatrix<f64>) -> Result<Option<f64>> {
    sensitivity_with(w_true, w_hat, &MetricOptions::default())
}

/// Mean of `w_hat - w` over off-diagonal entries; 0 when `n = 1`.
pub fn weight_bias(w_true: &DMatrix<f64>, w_hat: &DMatrix<f64>) -> Result<f64> {
    let n = check_square(w_true, w_hat)?;
    if n < 2 {
        return Ok(0.0);
    }
    let s: f64 = off_diagonal(n)
        .map(|(i, j)| w_hat[(i, j)] - w_true[(i, j)])
        .sum();
    Ok(s / (n * n - n) as f64)
}

pub fn weight_mae(w_true: &DMatrix<f64>, w_hat: &DMatrix<f64>) -> Result<f64> {
    let n = check_square(w_true, w_hat)?;
    if n < 2 {
        return Ok(0.0);
    }
    let s: f64 = off_diagonal(n)
        .map(|(i, j)| (w_hat[(i, j)] - w_true[(i, j)]).abs())
        .sum();
    Ok(s / (n * n - n) as f64)
}

pub fn mean_bias(a_true: &DMatrix<f64>, a_hat: &DMatrix<f64>) -> Result<f64> {
    check_same(a_true, a_hat)?;
    Ok((a_hat - a_true).mean())
}

/// Root mean squared in-sample residual.
pub fn fitted_rmse(panel: &DMatrix<f64>, fitted: &DMatrix<f64>) -> Result<f64> {
    check_same(panel, fitted)?;
    Ok((fitted - panel).map(|d| d * d).mean().sqrt())
}

pub struct Truth<'a> {
    pub weights: &'a DMatrix<f64>,
    pub levels: &'a DMatrix<f64>,
    pub panel: &'a DMatrix<f64>,
}

pub fn evaluate(
    truth: &Truth<'_>,
    w_hat: &DMatrix<f64>,
    a_hat: &DMatrix<f64>,
    fitted: &DMatrix<f64>,
    opts: &MetricOptions,
) -> Result<MetricReport> {
    Ok(MetricReport {
        specificity: specificity_with(truth.weights, w_hat, opts)?,
        sensitivity: sensitivity_with(truth.weights, w_hat, opts)?,
        weight_bias: weight_bias(truth.weights, w_hat)?,
        mean_bias: mean_bias(truth.levels, a_hat)?,
        fitted_rmse: fitted_rmse(truth.panel, fitted)?,
        weight_mae: weight_mae(truth.weights, w_hat)?,
    })
}
