use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cd::{geometric_grid, Prepared};
use super::{PenalizedProblem, SolverOptions, LAMBDA_MIN_RATIO, N_LAMBDA};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvOptions {
    pub k: usize,
    pub seed: u64,
    pub n_lambda: usize,
    pub lambda_min_ratio: f64,
    pub solver: SolverOptions,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            k: 10,
            seed: 0,
            n_lambda: N_LAMBDA,
            lambda_min_ratio: LAMBDA_MIN_RATIO,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub lambda_grid: Vec<f64>,
    pub cv_mse: Vec<f64>,
    pub cv_se: Vec<f64>,
    pub lambda_min: f64,
    pub lambda_1se: f64,
    pub index_min: usize,
    pub index_1se: usize,
}

/// Uniformly random fold labels: a seeded shuffle of the rows dealt
/// round-robin into `k` folds.
pub fn random_folds(m: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut seed::rng(seed));
    let mut folds = vec![0; m];
    for (pos, row) in order.into_iter().enumerate() {
        folds[row] = pos % k;
    }
    folds
}

pub fn cross_validate(problem: &PenalizedProblem, k: usize, seed: u64) -> Result<CvResult> {
    let opts = CvOptions {
        k,
        seed,
        ..CvOptions::default()
    };
    if k < 2 || problem.n_rows() < 2 * k {
        return Err(Error::InvalidInput(format!(
            "{k}-fold cross-validation needs k >= 2 and at least {} rows, got {}",
            2 * k,
            problem.n_rows()
        )));
    }
    let folds = random_folds(problem.n_rows(), k, seed);
    cross_validate_with(problem, &folds, &opts)
}

/// Penalty weights computed from the training rows of one fold; the
/// argument marks the rows kept for training.
pub type FoldWeights<'a> = &'a (dyn Fn(&[bool]) -> Result<Vec<f64>> + Sync);

/// Cross-validation over explicit fold labels in `0..opts.k`.
pub fn cross_validate_with(
    problem: &PenalizedProblem,
    folds: &[usize],
    opts: &CvOptions,
) -> Result<CvResult> {
    cross_validate_refit(problem, folds, opts, None)
}

/// As [`cross_validate_with`], but when `fold_weights` is given every fold
/// fits with penalty weights derived from its own training rows, so data
/// dependent weights cannot see the held-out rows. The lambda grid still
/// comes from the full problem.
pub fn cross_validate_refit(
    problem: &PenalizedProblem,
    folds: &[usize],
    opts: &CvOptions,
    fold_weights: Option<FoldWeights<'_>>,
) -> Result<CvResult> {
    problem.validate()?;
    let k = opts.k;
    if k < 2 {
        return Err(Error::InvalidInput("cross-validation needs k >= 2".into()));
    }
    if folds.len() != problem.n_rows() || folds.iter().any(|f| *f >= k) {
        return Err(Error::Dimension(
            "fold labels must cover every row with values in 0..k".into(),
        ));
    }
    let mut sizes = vec![0usize; k];
    for f in folds {
        sizes[*f] += 1;
    }
    if let Some(empty) = sizes.iter().position(|s| *s == 0) {
        return Err(Error::DegenerateFold(empty));
    }
    if sizes.iter().any(|s| *s == problem.n_rows()) {
        return Err(Error::InvalidInput("a fold holds every row".into()));
    }

    let full = Prepared::new(problem, None);
    let lmax = full.lambda_max(&opts.solver)?;
    let grid = geometric_grid(lmax, opts.n_lambda, opts.lambda_min_ratio);

    let per_fold: Vec<Vec<f64>> = (0..k)
        .into_par_iter()
        .map(|f| fold_errors(problem, folds, f, &grid, &opts.solver, fold_weights))
        .collect::<Result<_>>()?;

    let kf = k as f64;
    let mut cv_mse = Vec::with_capacity(grid.len());
    let mut cv_se = Vec::with_capacity(grid.len());
    for l in 0..grid.len() {
        let mean = per_fold.iter().map(|e| e[l]).sum::<f64>() / kf;
        let var = per_fold.iter().map(|e| (e[l] - mean).powi(2)).sum::<f64>() / (kf - 1.0);
        cv_mse.push(mean);
        cv_se.push((var / kf).sqrt());
    }
    let index_min = cv_mse
        .iter()
        .enumerate()
        .fold(0, |best, (i, v)| if *v < cv_mse[best] { i } else { best });
    let bar = cv_mse[index_min] + cv_se[index_min];
    let index_1se = cv_mse.iter().position(|v| *v <= bar).unwrap_or(index_min);
    Ok(CvResult {
        lambda_min: grid[index_min],
        lambda_1se: grid[index_1se],
        lambda_grid: grid,
        cv_mse,
        cv_se,
        index_min,
        index_1se,
    })
}

fn fold_errors(
    problem: &PenalizedProblem,
    folds: &[usize],
    fold: usize,
    grid: &[f64],
    solver: &SolverOptions,
    fold_weights: Option<FoldWeights<'_>>,
) -> Result<Vec<f64>> {
    let keep: Vec<bool> = folds.iter().map(|f| *f != fold).collect();
    let held_out: Vec<usize> = (0..folds.len()).filter(|&r| !keep[r]).collect();
    let prep = match fold_weights {
        Some(weights) => {
            let own = problem.clone().with_penalty_weights(weights(&keep)?)?;
            Prepared::new(&own, Some(&keep))
        }
        None => Prepared::new(problem, Some(&keep)),
    };
    let mut beta = vec![0.0; prep.p()];
    let mut errors = Vec::with_capacity(grid.len());
    for &lambda in grid {
        prep.solve(lambda, &mut beta, solver)?;
        let (coef, b0) = prep.split(beta.clone());
        let fitted = problem.design.mul_vec(&coef);
        let sse: f64 = held_out
            .iter()
            .map(|&r| (problem.response[r] - fitted[r] - b0).powi(2))
            .sum();
        errors.push(sse / held_out.len() as f64);
    }
    Ok(errors)
}
