//! Step two: one box-constrained adaptive lasso over the column-stacked
//! panel, fitting break magnitudes at the step-one candidates together with
//! every off-diagonal spatial weight.
//!
//! Rows are location-major blocks of length `T`. The block of location `i`
//! carries its own step columns (baseline plus one per candidate) and the
//! raw series `y_j`, `j != i`, whose coefficients are `w_ij`. The regressors
//! are contemporaneous observations, so the fit inherits the usual
//! simultaneity bias of least squares on spatial lags; no correction is made.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::detect::{adaptive_weights, run_all_locations, CandidateSets, DetectConfig};
use crate::error::{Error, Result};
use crate::model::{
    invert_i_minus, spectral_radius_robust, PanelObservations, SpatialWeightMatrix,
};
use crate::penalized::{
    cross_validate_with, default_ridge_lambda, fit_path, kkt_residual, least_squares, random_folds,
    ridge_fit, CvOptions, CvResult, Design, LassoFit, PenalizedProblem, SolverOptions,
    ESTIMATION_LAMBDA_MIN_RATIO, N_LAMBDA,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnRole {
    /// Jump of location `location` taking effect at 1-based `instant`;
    /// instant 1 is the baseline level.
    Break { location: usize, instant: usize },
    /// Spatial weight `w[row, col]`.
    Weight { row: usize, col: usize },
}

#[derive(Debug, Clone)]
pub struct JointDesign {
    pub t_len: usize,
    pub n: usize,
    pub design: Design,
    pub response: Vec<f64>,
    /// Role of each design column; break columns come first.
    pub column_map: Vec<ColumnRole>,
    pub n_break_columns: usize,
    /// Series with no variation over time; their weight columns cannot be
    /// told apart from the baseline level.
    pub constant_series: Vec<bool>,
}

impl JointDesign {
    pub fn n_weight_columns(&self) -> usize {
        self.column_map.len() - self.n_break_columns
    }

    pub fn break_block(&self) -> DMatrix<f64> {
        self.design
            .to_dense()
            .columns(0, self.n_break_columns)
            .into_owned()
    }

    pub fn weight_block(&self) -> DMatrix<f64> {
        self.design
            .to_dense()
            .columns(self.n_break_columns, self.n_weight_columns())
            .into_owned()
    }

    /// Stacked row index of `(t, location)` for 0-based `t`.
    pub fn row(&self, t: usize, location: usize) -> usize {
        location * self.t_len + t
    }
}

pub fn build_joint_design(
    panel: &PanelObservations,
    candidates: &CandidateSets,
) -> Result<JointDesign> {
    let (t_len, n) = (panel.t_len(), panel.n());
    if candidates.n() != n || candidates.t_len != t_len {
        return Err(Error::Dimension(format!(
            "candidates cover {} locations over T = {}, panel is {} x {}",
            candidates.n(),
            candidates.t_len,
            t_len,
            n
        )));
    }
    let mut design = Design::new(n * t_len);
    let mut column_map = Vec::new();
    for (i, set) in candidates.sets.iter().enumerate() {
        if set.iter().any(|&t| t < 2 || t > t_len) {
            return Err(Error::InvalidInput(format!(
                "candidate instants of location {i} must lie in 2..={t_len}"
            )));
        }
        for instant in std::iter::once(1).chain(set.iter().copied()) {
            let offset = instant - 1;
            design.push_column(i * t_len + offset, vec![1.0; t_len - offset])?;
            column_map.push(ColumnRole::Break {
                location: i,
                instant,
            });
        }
    }
    let n_break_columns = column_map.len();
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            design.push_column(i * t_len, panel.column(j))?;
            column_map.push(ColumnRole::Weight { row: i, col: j });
        }
    }
    let response = (0..n).flat_map(|i| panel.column(i)).collect();
    let constant_series = (0..n)
        .map(|j| {
            let c = panel.values().column(j);
            c.iter().all(|v| *v == c[0])
        })
        .collect();
    Ok(JointDesign {
        t_len,
        n,
        design,
        response,
        column_map,
        n_break_columns,
        constant_series,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointConfig {
    pub gamma: f64,
    pub folds: usize,
    pub n_lambda: usize,
    pub lambda_min_ratio: f64,
    /// Ridge penalty when ridge pre-estimation is used; `None` uses
    /// `0.01 trace(X^T X) / p`.
    pub ridge_lambda: Option<f64>,
    /// Least-squares pre-estimation only when `p <= fraction * nT` ...
    pub ols_max_fraction: f64,
    /// ... and the Cholesky condition estimate stays below this.
    pub ols_max_condition: f64,
    pub seed: u64,
    pub solver: SolverOptions,
}

impl Default for JointConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            folds: 10,
            n_lambda: N_LAMBDA,
            lambda_min_ratio: ESTIMATION_LAMBDA_MIN_RATIO,
            ridge_lambda: None,
            ols_max_fraction: 0.8,
            ols_max_condition: 1e10,
            seed: 1,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Break {
    pub instant: usize,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub spectral_radius: Option<f64>,
    pub candidate_breaks: usize,
    pub selected_breaks: usize,
    pub pre_estimator: String,
    pub condition_estimate: Option<f64>,
    pub lambda_min: Option<f64>,
    pub lambda_1se: Option<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub sweeps: usize,
    pub links: usize,
    /// Per location `j`: number of locations `i` with `w[i, j] > 0`.
    pub links_out: Vec<usize>,
    /// Per location `i`: number of nonzero weights in row `i`.
    pub links_in: Vec<usize>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct EstimationResult {
    pub w_hat: SpatialWeightMatrix,
    /// Estimated level at instant 1 for every location.
    pub baseline: Vec<f64>,
    /// Nonzero jumps at instants >= 2, per location, by increasing instant.
    pub breaks: Vec<Vec<Break>>,
    /// `T x n` reconstructed local means.
    pub a_hat: DMatrix<f64>,
    /// `T x n` matrix of `S a_hat_t`; absent when `rho(w_hat) >= 1`.
    pub overall_mean: Option<DMatrix<f64>>,
    /// `T x n` in-sample fitted values.
    pub fitted: DMatrix<f64>,
    pub selected_lambda: f64,
    pub diagnostics: Diagnostics,
}

impl EstimationResult {
    /// Changes `tau` with `a_hat[tau] != a_hat[tau + 1]`, as 1-based `tau`.
    pub fn change_points(&self, location: usize) -> Vec<usize> {
        self.breaks[location]
            .iter()
            .map(|b| b.instant - 1)
            .collect()
    }
}

/// Everything the final fit was computed from.
#[derive(Debug, Clone)]
pub struct JointFit {
    pub result: EstimationResult,
    pub problem: PenalizedProblem,
    pub fit: LassoFit,
    pub cv: Option<CvResult>,
}

pub fn fit_joint(design: &JointDesign, cfg: &JointConfig) -> Result<EstimationResult> {
    fit_joint_full(design, cfg).map(|f| f.result)
}

fn pre_estimate(
    jd: &JointDesign,
    cfg: &JointConfig,
) -> Result<(Vec<f64>, &'static str, Option<f64>)> {
    let p = jd.design.n_cols();
    let m = jd.design.n_rows();
    if p as f64 <= cfg.ols_max_fraction * m as f64 {
        if let Ok(ls) = least_squares(&jd.design, &jd.response) {
            if ls.condition_estimate < cfg.ols_max_condition {
                return Ok((ls.coefficients, "ols", Some(ls.condition_estimate)));
            }
        }
    }
    let lambda = cfg
        .ridge_lambda
        .unwrap_or_else(|| default_ridge_lambda(&jd.design));
    Ok((ridge_fit(&jd.design, &jd.response, lambda)?, "ridge", None))
}

pub fn fit_joint_full(jd: &JointDesign, cfg: &JointConfig) -> Result<JointFit> {
    let mut warnings = Vec::new();
    // weights on a constant series are not identified against the baseline
    let mut pinned = vec![false; jd.column_map.len()];
    for (k, role) in jd.column_map.iter().enumerate() {
        if let ColumnRole::Weight { col, .. } = role {
            pinned[k] = jd.constant_series[*col];
        }
    }
    if pinned.iter().any(|p| *p) {
        warnings.push("weights on constant series are fixed at zero".to_string());
    }
    let mut reduced = jd.design.clone();
    if pinned.iter().any(|p| *p) {
        // drop pinned columns from the pre-estimate by zeroing them
        let mut d = Design::new(reduced.n_rows());
        for k in 0..reduced.n_cols() {
            let c = reduced.column(k);
            if pinned[k] {
                d.push_column(c.start, vec![0.0; c.values.len()])?;
            } else {
                d.push_column(c.start, c.values.clone())?;
            }
        }
        reduced = d;
    }
    let pre_design = JointDesign {
        design: reduced,
        ..jd.clone()
    };
    let (pre, pre_estimator, condition_estimate) = pre_estimate(&pre_design, cfg)?;
    let mut weights = adaptive_weights(&pre, cfg.gamma);
    for (w, p) in weights.iter_mut().zip(&pinned) {
        if *p {
            *w = f64::INFINITY;
        }
    }
    let (lower, upper): (Vec<f64>, Vec<f64>) = jd
        .column_map
        .iter()
        .map(|role| match role {
            ColumnRole::Break { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            ColumnRole::Weight { .. } => (0.0, 1.0),
        })
        .unzip();
    let problem = PenalizedProblem::new(jd.design.clone(), jd.response.clone())?
        .with_penalty_weights(weights)?
        .with_bounds(lower, upper)?;

    let opts = CvOptions {
        k: cfg.folds,
        seed: cfg.seed,
        n_lambda: cfg.n_lambda,
        lambda_min_ratio: cfg.lambda_min_ratio,
        solver: cfg.solver,
    };
    let m = problem.n_rows();
    if cfg.folds < 2 || m < 2 * cfg.folds {
        return Err(Error::InvalidInput(format!(
            "{}-fold cross-validation needs at least {} stacked rows",
            cfg.folds,
            2 * cfg.folds
        )));
    }
    let folds = random_folds(m, cfg.folds, cfg.seed);
    let (fit, cv) = match cross_validate_with(&problem, &folds, &opts) {
        Ok(cv) => {
            let path = fit_path(&problem, &cv.lambda_grid[..=cv.index_1se], &cfg.solver)?;
            (path.into_iter().last().expect("nonempty path"), Some(cv))
        }
        Err(Error::AllPenaltiesInfinite | Error::DegenerateResponse) => {
            warnings.push("no column can enter the model; returning the zero fit".into());
            let zeros = vec![0.0; problem.n_cols()];
            let objective = problem.objective(0.0, &zeros, 0.0);
            (
                LassoFit {
                    coefficients: zeros,
                    intercept_value: 0.0,
                    lambda: 0.0,
                    objective,
                    iterations: 0,
                },
                None,
            )
        }
        Err(e) => return Err(e),
    };
    let kkt = kkt_residual(&problem, &fit);
    let result = assemble(
        jd,
        &fit,
        cv.as_ref(),
        pre_estimator,
        condition_estimate,
        kkt,
        warnings,
    )?;
    Ok(JointFit {
        result,
        problem,
        fit,
        cv,
    })
}

fn assemble(
    jd: &JointDesign,
    fit: &LassoFit,
    cv: Option<&CvResult>,
    pre_estimator: &str,
    condition_estimate: Option<f64>,
    kkt: f64,
    mut warnings: Vec<String>,
) -> Result<EstimationResult> {
    let (t_len, n) = (jd.t_len, jd.n);
    let mut w = DMatrix::zeros(n, n);
    let mut baseline = vec![0.0; n];
    let mut breaks = vec![Vec::new(); n];
    for (role, b) in jd.column_map.iter().zip(&fit.coefficients) {
        match *role {
            ColumnRole::Weight { row, col } => w[(row, col)] = *b,
            ColumnRole::Break {
                location,
                instant: 1,
            } => baseline[location] = *b,
            ColumnRole::Break { location, instant } => {
                if *b != 0.0 {
                    breaks[location].push(Break {
                        instant,
                        magnitude: *b,
                    });
                }
            }
        }
    }
    for set in &mut breaks {
        set.sort_by_key(|b| b.instant);
    }
    let w_hat = SpatialWeightMatrix::new(w)?;
    let a_hat = DMatrix::from_fn(t_len, n, |t, i| {
        baseline[i]
            + breaks[i]
                .iter()
                .filter(|b| b.instant <= t + 1)
                .map(|b| b.magnitude)
                .sum::<f64>()
    });
    let stacked = jd.design.mul_vec(&fit.coefficients);
    let fitted = DMatrix::from_fn(t_len, n, |t, i| {
        stacked[i * t_len + t] + fit.intercept_value
    });

    let rho = spectral_radius_robust(w_hat.matrix());
    let overall_mean = match rho {
        Some(r) if r < 1.0 => match invert_i_minus(w_hat.matrix(), r) {
            Ok(s) => Some(&a_hat * s.transpose()),
            Err(e) => {
                warnings.push(format!("overall mean omitted: {e}"));
                None
            }
        },
        Some(r) => {
            warnings.push(format!(
                "estimated weights have spectral radius {r} >= 1; overall mean omitted"
            ));
            None
        }
        None => {
            warnings.push("spectral radius of the estimate could not be computed".into());
            None
        }
    };
    for msg in &warnings {
        log::warn!("{msg}");
    }
    let links_in = (0..n)
        .map(|i| (0..n).filter(|&j| w_hat.get(i, j) > 0.0).count())
        .collect();
    let links_out = (0..n)
        .map(|j| (0..n).filter(|&i| w_hat.get(i, j) > 0.0).count())
        .collect();
    let diagnostics = Diagnostics {
        spectral_radius: rho,
        candidate_breaks: jd.n_break_columns - n,
        selected_breaks: breaks.iter().map(Vec::len).sum(),
        pre_estimator: pre_estimator.to_string(),
        condition_estimate,
        lambda_min: cv.map(|c| c.lambda_min),
        lambda_1se: cv.map(|c| c.lambda_1se),
        objective: fit.objective,
        kkt_residual: kkt,
        sweeps: fit.iterations,
        links: w_hat.link_count(),
        links_out,
        links_in,
        warnings,
    };
    Ok(EstimationResult {
        w_hat,
        baseline,
        breaks,
        a_hat,
        overall_mean,
        fitted,
        selected_lambda: fit.lambda,
        diagnostics,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateConfig {
    pub detect: DetectConfig,
    pub joint: JointConfig,
    /// Fraction of the sample at the end in which no break may start.
    pub tail_freeze_fraction: f64,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            detect: DetectConfig::default(),
            joint: JointConfig::default(),
            tail_freeze_fraction: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Estimate {
    pub candidates: CandidateSets,
    pub result: EstimationResult,
}

/// Step one, tail freeze, step two.
pub fn estimate(panel: &PanelObservations, cfg: &EstimateConfig) -> Result<Estimate> {
    let mut candidates = run_all_locations(panel, &cfg.detect)?;
    if cfg.tail_freeze_fraction > 0.0 {
        candidates.tail_freeze(cfg.tail_freeze_fraction)?;
    }
    let design = build_joint_design(panel, &candidates)?;
    let result = fit_joint(&design, &cfg.joint)?;
    Ok(Estimate { candidates, result })
}
