//! Step one: per-location candidate change instants from an adaptive lasso
//! on the cumulative-step design `K` (`K[t, j] = 1` for `j <= t`).
//!
//! Coefficient `j` of `K` is the jump that takes effect at instant `j`
//! (1-based). Coefficient 1 is the baseline level and is never reported.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PanelObservations;
use crate::penalized::{
    cross_validate_refit, default_ridge_lambda, fit_path, random_folds, ridge_fit, CvOptions,
    CvResult, Design, FoldWeights, PenalizedProblem, SolverOptions, ESTIMATION_LAMBDA_MIN_RATIO,
    N_LAMBDA,
};

/// Lower-triangular matrix of ones, kept implicit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepDesign {
    t_len: usize,
}

impl StepDesign {
    pub fn new(t_len: usize) -> Result<Self> {
        if t_len < 2 {
            return Err(Error::InvalidInput(format!(
                "step design needs T >= 2, got {t_len}"
            )));
        }
        Ok(Self { t_len })
    }

    pub fn t_len(&self) -> usize {
        self.t_len
    }

    /// `K b`: running sum of `b`.
    pub fn mul(&self, beta: &[f64]) -> Vec<f64> {
        beta.iter()
            .scan(0.0, |acc, b| {
                *acc += b;
                Some(*acc)
            })
            .collect()
    }

    /// `K^T r`: reversed running sum of `r`.
    pub fn mul_transpose(&self, r: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; r.len()];
        let mut acc = 0.0;
        for t in (0..r.len()).rev() {
            acc += r[t];
            out[t] = acc;
        }
        out
    }

    /// Segment form: column `j` (0-based) is ones on rows `j..T`.
    pub fn to_design(&self) -> Design {
        let mut d = Design::new(self.t_len);
        for j in 0..self.t_len {
            d.push_column(j, vec![1.0; self.t_len - j])
                .expect("step column fits the design");
        }
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectConfig {
    /// Adaptive-lasso exponent in `w = 1 / |b*|^gamma`.
    pub gamma: f64,
    pub folds: usize,
    pub n_lambda: usize,
    pub lambda_min_ratio: f64,
    /// Ridge penalty for the pre-estimate; `None` uses `0.01 trace(K^T K) / T`.
    pub ridge_lambda: Option<f64>,
    /// Union the supports at `lambda_1se` and `lambda_min`.
    pub relax: bool,
    /// Recompute the pre-estimate inside every cross-validation fold from
    /// its training rows. Otherwise the weights carry information about the
    /// held-out points and the error curve favours overfitting.
    pub fold_pre_estimate: bool,
    pub seed: u64,
    pub solver: SolverOptions,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            folds: 10,
            n_lambda: N_LAMBDA,
            lambda_min_ratio: ESTIMATION_LAMBDA_MIN_RATIO,
            ridge_lambda: None,
            relax: false,
            fold_pre_estimate: true,
            seed: 0,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepOneFit {
    /// 1-based instants `t >= 2` with a nonzero jump.
    pub candidates: Vec<usize>,
    pub coefficients: Vec<f64>,
    pub penalty_weights: Vec<f64>,
    pub lambda: f64,
    /// Absent when the series carries no signal and the fit is trivially empty.
    pub cv: Option<CvResult>,
}

/// Adaptive weights `1 / |b|^gamma`; an exact zero maps to infinity.
pub fn adaptive_weights(pre_estimate: &[f64], gamma: f64) -> Vec<f64> {
    pre_estimate
        .iter()
        .map(|b| {
            if *b == 0.0 {
                f64::INFINITY
            } else {
                1.0 / b.abs().powf(gamma)
            }
        })
        .collect()
}

fn step_problem(series: &[f64], cfg: &DetectConfig) -> Result<PenalizedProblem> {
    if series.len() < 8 {
        return Err(Error::InvalidInput(format!(
            "candidate detection needs T >= 8, got {}",
            series.len()
        )));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("series must be finite".into()));
    }
    let design = StepDesign::new(series.len())?.to_design();
    let weights = step_weights(&design, series, cfg, None)?;
    PenalizedProblem::new(design, series.to_vec())?.with_penalty_weights(weights)
}

/// Ridge pre-fit and adaptive weights, on the rows in `keep` when given.
fn step_weights(
    design: &Design,
    series: &[f64],
    cfg: &DetectConfig,
    keep: Option<&[bool]>,
) -> Result<Vec<f64>> {
    let ridge_lambda = cfg
        .ridge_lambda
        .unwrap_or_else(|| default_ridge_lambda(design));
    let pre = match keep {
        Some(keep) => {
            let y: Vec<f64> = series
                .iter()
                .zip(keep)
                .map(|(v, k)| if *k { *v } else { 0.0 })
                .collect();
            ridge_fit(&design.masked(keep), &y, ridge_lambda)?
        }
        None => ridge_fit(design, series, ridge_lambda)?,
    };
    Ok(adaptive_weights(&pre, cfg.gamma))
}

fn support(coefficients: &[f64]) -> Vec<usize> {
    coefficients
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, b)| **b != 0.0)
        .map(|(j, _)| j + 1)
        .collect()
}

fn empty_fit(problem: &PenalizedProblem) -> StepOneFit {
    StepOneFit {
        candidates: Vec::new(),
        coefficients: vec![0.0; problem.n_cols()],
        penalty_weights: problem.penalty_weights.clone(),
        lambda: 0.0,
        cv: None,
    }
}

/// Ridge pre-fit, adaptive weights, cross-validated lambda (1-SE rule) and
/// the final lasso fit for one series.
pub fn fit_step_one(series: &[f64], cfg: &DetectConfig) -> Result<StepOneFit> {
    let problem = step_problem(series, cfg)?;
    let t_len = series.len();
    let opts = CvOptions {
        k: cfg.folds,
        seed: cfg.seed,
        n_lambda: cfg.n_lambda,
        lambda_min_ratio: cfg.lambda_min_ratio,
        solver: cfg.solver,
    };
    if cfg.folds < 2 || t_len < 2 * cfg.folds {
        return Err(Error::InvalidInput(format!(
            "{}-fold cross-validation needs at least {} time points",
            cfg.folds,
            2 * cfg.folds
        )));
    }
    let folds = random_folds(t_len, cfg.folds, cfg.seed);
    let refit = |keep: &[bool]| step_weights(&problem.design, series, cfg, Some(keep));
    let fold_weights: Option<FoldWeights<'_>> = cfg.fold_pre_estimate.then_some(&refit);
    let cv = match cross_validate_refit(&problem, &folds, &opts, fold_weights) {
        Ok(cv) => cv,
        Err(Error::AllPenaltiesInfinite | Error::DegenerateResponse) => {
            return Ok(empty_fit(&problem))
        }
        Err(e) => return Err(e),
    };
    let last = if cfg.relax {
        cv.index_min
    } else {
        cv.index_1se
    };
    let path = fit_path(&problem, &cv.lambda_grid[..=last], &cfg.solver)?;
    let chosen = &path[cv.index_1se];
    let mut candidates = support(&chosen.coefficients);
    if cfg.relax {
        candidates.extend(support(&path[cv.index_min].coefficients));
        candidates.sort_unstable();
        candidates.dedup();
    }
    Ok(StepOneFit {
        candidates,
        coefficients: chosen.coefficients.clone(),
        penalty_weights: problem.penalty_weights.clone(),
        lambda: chosen.lambda,
        cv: Some(cv),
    })
}

/// Step-one fit at a caller-chosen lambda (no cross-validation).
pub fn fit_step_one_at(series: &[f64], cfg: &DetectConfig, lambda: f64) -> Result<StepOneFit> {
    let problem = step_problem(series, cfg)?;
    if problem.penalty_weights.iter().all(|w| w.is_infinite()) {
        return Ok(empty_fit(&problem));
    }
    let fit = crate::penalized::lasso_cd_with(&problem, lambda, None, &cfg.solver)?;
    Ok(StepOneFit {
        candidates: support(&fit.coefficients),
        coefficients: fit.coefficients,
        penalty_weights: problem.penalty_weights,
        lambda,
        cv: None,
    })
}

pub fn detect_candidates(series: &[f64], cfg: &DetectConfig) -> Result<Vec<usize>> {
    fit_step_one(series, cfg).map(|f| f.candidates)
}

/// Candidate instants per location (1-based instants in `2..=T`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSets {
    pub t_len: usize,
    pub sets: Vec<Vec<usize>>,
    /// Locations whose detection failed, with the error message. Their sets
    /// are empty.
    #[serde(default)]
    pub failures: Vec<(usize, String)>,
}

impl CandidateSets {
    pub fn new(t_len: usize, sets: Vec<Vec<usize>>) -> Result<Self> {
        for (i, s) in sets.iter().enumerate() {
            if s.iter().any(|t| *t < 2 || *t > t_len) {
                return Err(Error::InvalidInput(format!(
                    "location {i} has a candidate outside 2..={t_len}"
                )));
            }
            if s.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidInput(format!(
                    "location {i} candidates are not strictly increasing"
                )));
            }
        }
        Ok(Self {
            t_len,
            sets,
            failures: Vec::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.sets.len()
    }

    /// Sum of candidate-set sizes.
    pub fn total(&self) -> usize {
        self.sets.iter().map(Vec::len).sum()
    }

    /// Drops every candidate in the last `fraction` of the sample, i.e.
    /// instants above `T - ceil(fraction T)`.
    pub fn tail_freeze(&mut self, fraction: f64) -> Result<()> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::InvalidInput(format!(
                "tail freeze fraction {fraction} must be in [0, 1)"
            )));
        }
        let frozen = (fraction * self.t_len as f64).ceil() as usize;
        let last = self.t_len - frozen;
        for s in &mut self.sets {
            s.retain(|t| *t <= last);
        }
        Ok(())
    }

    /// `{ "<label>": [instants...] }`
    pub fn to_json(&self, labels: &[String]) -> serde_json::Value {
        let map = labels
            .iter()
            .zip(&self.sets)
            .map(|(l, s)| (l.clone(), serde_json::json!(s)))
            .collect::<serde_json::Map<_, _>>();
        serde_json::Value::Object(map)
    }

    pub fn from_json(value: &serde_json::Value, labels: &[String], t_len: usize) -> Result<Self> {
        let obj = value
            .as_object()
            .ok_or_else(|| Error::InvalidInput("candidate JSON must be an object".into()))?;
        let sets = labels
            .iter()
            .map(|l| {
                let arr = obj.get(l).and_then(|v| v.as_array()).ok_or_else(|| {
                    Error::InvalidInput(format!("no candidate list for location '{l}'"))
                })?;
                arr.iter()
                    .map(|v| {
                        v.as_u64().map(|t| t as usize).ok_or_else(|| {
                            Error::InvalidInput(format!("non-integer instant for '{l}'"))
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(t_len, sets)
    }
}

/// Runs [`fit_step_one`] on every column. All locations share the fold
/// seed, which makes the result equivariant under column permutations.
pub fn run_all_locations(panel: &PanelObservations, cfg: &DetectConfig) -> Result<CandidateSets> {
    let results: Vec<Result<Vec<usize>>> = (0..panel.n())
        .into_par_iter()
        .map(|i| detect_candidates(&panel.column(i), cfg))
        .collect();
    let mut sets = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(s) => sets.push(s),
            Err(e) => {
                log::warn!("candidate detection failed for location {i}: {e}");
                failures.push((i, e.to_string()));
                sets.push(Vec::new());
            }
        }
    }
    if !failures.is_empty() && failures.len() == panel.n() {
        return Err(Error::AllLocationsFailed(failures[0].1.clone()));
    }
    let out = CandidateSets {
        t_len: panel.t_len(),
        sets,
        failures,
    };
    let total = out.total();
    if total >= panel.t_len() {
        log::warn!(
            "{total} candidate instants in total, not below T = {}; step two gains no reduction \
             over a single full series",
            panel.t_len()
        );
    }
    if total >= panel.t_len() * panel.n() {
        log::warn!("{total} candidate instants in total, not below nT");
    }
    Ok(out)
}
