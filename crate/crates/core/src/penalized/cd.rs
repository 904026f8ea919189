use super::{penalty, soft_threshold_clip, Design, LassoFit, PenalizedProblem, SolverOptions};
use super::{LAMBDA_MIN_RATIO, N_LAMBDA};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Upper bound on stored Gram entries before falling back to residual
/// updates.
const MAX_GRAM_NNZ: usize = 4_000_000;

/// Largest connected block solved directly by a face step.
const MAX_FACE_BLOCK: usize = 400;

/// Relative diagonal damping of the face Newton system.
const FACE_DAMPING: f64 = 1e-10;

/// Problem in solver form: the intercept, if any, becomes a trailing
/// unpenalized column of ones, and rows outside the training mask are zeroed.
///
/// Coordinate updates run either on the residual vector or, when the Gram
/// matrix is sparse enough to store, on the gradient `X^T r` kept current
/// through Gram rows. The second mode makes a coordinate that stays at zero
/// cost O(1), which dominates on block-structured designs.
#[derive(Debug, Clone)]
pub(crate) struct Prepared {
    pub design: Design,
    pub response: Vec<f64>,
    pub weights: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub norms: Vec<f64>,
    pub intercept: bool,
    gram: Option<Arc<Vec<Vec<(usize, f64)>>>>,
    xty: Vec<f64>,
    #[cfg_attr(not(debug_assertions), allow(dead_code))]
    yy: f64,
}

/// Running state of a solve: the residual or the gradient `X^T r`.
enum State {
    Residual(Vec<f64>),
    Gradient(Vec<f64>),
}

impl Prepared {
    pub fn new(problem: &PenalizedProblem, keep: Option<&[bool]>) -> Self {
        let mut design = if problem.intercept {
            problem.design.with_ones_column()
        } else {
            problem.design.clone()
        };
        let mut response = problem.response.clone();
        if let Some(keep) = keep {
            design = design.masked(keep);
            for (y, k) in response.iter_mut().zip(keep) {
                if !k {
                    *y = 0.0;
                }
            }
        }
        let mut weights = problem.penalty_weights.clone();
        let mut lower = problem.lower_bounds.clone();
        let mut upper = problem.upper_bounds.clone();
        if problem.intercept {
            weights.push(0.0);
            lower.push(f64::NEG_INFINITY);
            upper.push(f64::INFINITY);
        }
        let norms = (0..design.n_cols())
            .map(|j| design.col_sq_norm(j).sqrt())
            .collect();
        let xty = (0..design.n_cols())
            .map(|j| design.dot(j, &response))
            .collect();
        let yy = response.iter().map(|v| v * v).sum();
        let gram = design.sparse_gram(MAX_GRAM_NNZ).map(Arc::new);
        Self {
            design,
            response,
            weights,
            lower,
            upper,
            norms,
            intercept: problem.intercept,
            gram,
            xty,
            yy,
        }
    }

    /// Forces residual-mode updates.
    #[cfg(test)]
    pub fn without_gram(mut self) -> Self {
        self.gram = None;
        self
    }

    pub fn p(&self) -> usize {
        self.design.n_cols()
    }

    /// Solver vector -> (user coefficients, intercept).
    pub fn split(&self, mut beta: Vec<f64>) -> (Vec<f64>, f64) {
        let b0 = if self.intercept {
            beta.pop().unwrap()
        } else {
            0.0
        };
        (beta, b0)
    }

    pub fn join(&self, coefficients: &[f64], intercept: f64) -> Vec<f64> {
        let mut beta = coefficients.to_vec();
        if self.intercept {
            beta.push(intercept);
        }
        beta
    }

    fn residual(&self, beta: &[f64]) -> Vec<f64> {
        let fitted = self.design.mul_vec(beta);
        self.response
            .iter()
            .zip(&fitted)
            .map(|(y, f)| y - f)
            .collect()
    }

    fn state(&self, beta: &[f64]) -> State {
        match &self.gram {
            Some(gram) => {
                let mut g = self.xty.clone();
                for (j, b) in beta.iter().enumerate() {
                    if *b != 0.0 {
                        for &(k, v) in &gram[j] {
                            g[k] -= v * b;
                        }
                    }
                }
                State::Gradient(g)
            }
            None => State::Residual(self.residual(beta)),
        }
    }

    fn objective(&self, lambda: f64, r: &[f64], beta: &[f64]) -> f64 {
        r.iter().map(|v| v * v).sum::<f64>() + lambda * penalty(&self.weights, beta)
    }

    #[cfg(debug_assertions)]
    fn state_objective(&self, lambda: f64, state: &State, beta: &[f64]) -> f64 {
        match state {
            State::Residual(r) => self.objective(lambda, r, beta),
            // ||r||^2 = y'y - b'X'y - b'(X'y - Gb)
            State::Gradient(g) => {
                let rss = self.yy
                    - beta
                        .iter()
                        .zip(self.xty.iter().zip(g))
                        .map(|(b, (c, g))| b * (c + g))
                        .sum::<f64>();
                rss + lambda * penalty(&self.weights, beta)
            }
        }
    }

    fn movable(&self, j: usize) -> bool {
        self.weights[j].is_finite() && self.norms[j] > 0.0
    }

    /// Exact minimization over coordinate `j`, carried out on the unit-norm
    /// column `x_j / ||x_j||`. Returns the change in scaled units.
    #[inline]
    fn update(&self, j: usize, lambda: f64, beta: &mut [f64], state: &mut State) -> f64 {
        let nj = self.norms[j];
        let old = beta[j] * nj;
        let grad = match state {
            State::Residual(r) => self.design.dot(j, r),
            State::Gradient(g) => g[j],
        };
        let z = grad / nj + old;
        let threshold = 0.5 * lambda * self.weights[j] / nj;
        let new = soft_threshold_clip(z, threshold, self.lower[j] * nj, self.upper[j] * nj);
        if new != old {
            let new_raw = new / nj;
            let delta = new_raw - beta[j];
            match state {
                State::Residual(r) => self.design.axpy(j, -delta, r),
                State::Gradient(g) => {
                    let gram = self.gram.as_ref().expect("gradient mode has a Gram");
                    for &(k, v) in &gram[j] {
                        g[k] -= v * delta;
                    }
                }
            }
            beta[j] = new_raw;
        }
        (new - old).abs()
    }

    /// Newton step on the current face: nonzero coefficients strictly
    /// inside their bounds move with their signs fixed, everything else
    /// stays put. The direction solves a slightly damped Newton system, the
    /// step length is the exact minimizer of the face quadratic along it,
    /// capped where a coefficient first reaches zero or a bound, so the
    /// objective never rises. Damping keeps duplicated columns solvable:
    /// along their common direction the step runs to the cap, which zeroes
    /// the more heavily penalized copy. Needs the Gram; works one connected
    /// block of it at a time. Returns false when no step was taken.
    fn face_step(&self, lambda: f64, beta: &mut [f64], state: &mut State) -> bool {
        let Some(gram) = &self.gram else {
            return false;
        };
        let p = self.p();
        let free: Vec<bool> = (0..p)
            .map(|j| {
                self.movable(j)
                    && beta[j] != 0.0
                    && beta[j] > self.lower[j]
                    && beta[j] < self.upper[j]
            })
            .collect();
        // connected components of the Gram restricted to free columns
        let mut comp = vec![usize::MAX; p];
        let mut blocks: Vec<Vec<usize>> = Vec::new();
        for j0 in (0..p).filter(|&j| free[j]) {
            if comp[j0] != usize::MAX {
                continue;
            }
            let id = blocks.len();
            let mut members = vec![j0];
            comp[j0] = id;
            let mut head = 0;
            while head < members.len() {
                let j = members[head];
                head += 1;
                for &(k, _) in &gram[j] {
                    if free[k] && comp[k] == usize::MAX {
                        comp[k] = id;
                        members.push(k);
                    }
                }
            }
            if members.len() > MAX_FACE_BLOCK {
                return false;
            }
            members.sort_unstable();
            blocks.push(members);
        }
        let mut moved = false;
        let mut pos = vec![usize::MAX; p];
        for members in &blocks {
            let q = members.len();
            for (a, &j) in members.iter().enumerate() {
                pos[j] = a;
            }
            let mut g = DMatrix::zeros(q, q);
            // gradient of the face quadratic 1/2 b'Gb - (X'y - lambda w s / 2)'b
            let mut h = DVector::zeros(q);
            for (a, &j) in members.iter().enumerate() {
                let mut v = 0.5 * lambda * self.weights[j] * beta[j].signum() - self.xty[j];
                for &(k, gjk) in &gram[j] {
                    if pos[k] != usize::MAX {
                        g[(a, pos[k])] = gjk;
                    }
                    v += gjk * beta[k];
                }
                h[a] = v;
            }
            for &j in members {
                pos[j] = usize::MAX;
            }
            let mut damped = g.clone();
            for a in 0..q {
                damped[(a, a)] *= 1.0 + FACE_DAMPING;
            }
            let Some(chol) = damped.cholesky() else {
                continue;
            };
            let d = -chol.solve(&h);
            let slope = h.dot(&d);
            let curvature = (&g * &d).dot(&d);
            if !(slope < 0.0) || !curvature.is_finite() {
                continue;
            }
            let mut step = if curvature > 0.0 {
                -slope / curvature
            } else {
                f64::INFINITY
            };
            let mut stop: Option<(usize, f64)> = None;
            for (a, &j) in members.iter().enumerate() {
                let (b0, dj) = (beta[j], d[a]);
                if dj == 0.0 {
                    continue;
                }
                let limits = [0.0, self.lower[j], self.upper[j]];
                for limit in limits {
                    let t = (limit - b0) / dj;
                    if t > 0.0 && t < step {
                        step = t;
                        stop = Some((j, limit));
                    }
                }
            }
            if !step.is_finite() || step <= 0.0 {
                continue;
            }
            for (a, &j) in members.iter().enumerate() {
                beta[j] += step * d[a];
            }
            if let Some((j, limit)) = stop {
                beta[j] = limit;
            }
            moved = true;
        }
        if moved {
            *state = self.state(beta);
        }
        moved
    }

    fn scale(&self, beta: &[f64]) -> f64 {
        beta.iter()
            .zip(&self.norms)
            .map(|(b, n)| (b * n).abs())
            .fold(1.0, f64::max)
    }

    /// Cyclic coordinate descent with active-set cycling. `beta` is the warm
    /// start on entry and the solution on exit; returns the sweep count.
    pub fn solve(&self, lambda: f64, beta: &mut [f64], opts: &SolverOptions) -> Result<usize> {
        for j in 0..self.p() {
            if !self.movable(j) {
                beta[j] = 0.0;
            } else {
                beta[j] = beta[j].clamp(self.lower[j], self.upper[j]);
            }
        }
        let movable: Vec<usize> = (0..self.p()).filter(|&j| self.movable(j)).collect();
        let mut state = self.state(beta);
        let mut sweeps = 0;
        #[cfg(debug_assertions)]
        let mut last_obj = self.state_objective(lambda, &state, beta);

        let mut sweep = |set: &[usize], beta: &mut [f64], state: &mut State| -> Result<f64> {
            sweeps += 1;
            let mut max_change: f64 = 0.0;
            for &j in set {
                max_change = max_change.max(self.update(j, lambda, beta, state));
            }
            #[cfg(debug_assertions)]
            {
                let obj = self.state_objective(lambda, state, beta);
                debug_assert!(
                    obj <= last_obj + 1e-9 * (1.0 + last_obj.abs()),
                    "objective increased from {last_obj} to {obj}"
                );
                last_obj = obj;
            }
            if sweeps > opts.max_sweeps {
                return Err(Error::NoConvergence {
                    sweeps: opts.max_sweeps,
                    lambda,
                    last_change: max_change,
                });
            }
            Ok(max_change)
        };

        // settle unpenalized columns first so a cold start at lambda_max stays at zero
        let free: Vec<usize> = movable
            .iter()
            .copied()
            .filter(|&j| self.weights[j] == 0.0)
            .collect();
        if !free.is_empty() && free.len() < movable.len() {
            loop {
                let change = sweep(&free, beta, &mut state)?;
                if change <= opts.tol * self.scale(beta) {
                    break;
                }
            }
        }
        loop {
            let change = sweep(&movable, beta, &mut state)?;
            if change <= opts.tol * self.scale(beta) {
                break;
            }
            // the next sweep's objective check also covers face steps
            let active: Vec<usize> = movable
                .iter()
                .copied()
                .filter(|&j| beta[j] != 0.0)
                .collect();
            loop {
                self.face_step(lambda, beta, &mut state);
                let change = sweep(&active, beta, &mut state)?;
                if change <= opts.tol * self.scale(beta) {
                    break;
                }
            }
        }
        Ok(sweeps)
    }

    pub fn fit(&self, lambda: f64, beta: Vec<f64>, sweeps: usize) -> LassoFit {
        let r = self.residual(&beta);
        let objective = self.objective(lambda, &r, &beta);
        let (coefficients, intercept_value) = self.split(beta);
        LassoFit {
            coefficients,
            intercept_value,
            lambda,
            objective,
            iterations: sweeps,
        }
    }

    /// Smallest lambda at which the zero vector (plus fitted unpenalized
    /// columns) solves the problem: `max_j |2 x_j^T r| / w_j` over columns
    /// with finite positive weight.
    pub fn lambda_max(&self, opts: &SolverOptions) -> Result<f64> {
        let penalized: Vec<usize> = (0..self.p())
            .filter(|&j| self.weights[j] > 0.0 && self.weights[j].is_finite())
            .collect();
        if penalized.is_empty() {
            if self.weights.iter().all(|w| w.is_infinite()) {
                return Err(Error::AllPenaltiesInfinite);
            }
            return Err(Error::InvalidInput(
                "no column carries a finite positive penalty weight".into(),
            ));
        }
        // zero start with the unpenalized columns settled, exactly as a cold
        // solve begins, so the zero vector stays put at lambda_max
        let mut beta = vec![0.0; self.p()];
        let mut state = self.state(&beta);
        let free: Vec<usize> = (0..self.p())
            .filter(|&j| self.movable(j) && self.weights[j] == 0.0)
            .collect();
        let mut sweeps = 0;
        loop {
            if free.is_empty() {
                break;
            }
            sweeps += 1;
            let mut change: f64 = 0.0;
            for &j in &free {
                change = change.max(self.update(j, 0.0, &mut beta, &mut state));
            }
            if change <= opts.tol * self.scale(&beta) {
                break;
            }
            if sweeps > opts.max_sweeps {
                return Err(Error::NoConvergence {
                    sweeps: opts.max_sweeps,
                    lambda: 0.0,
                    last_change: change,
                });
            }
        }
        let grad = |j: usize| match &state {
            State::Residual(r) => self.design.dot(j, r),
            State::Gradient(g) => g[j],
        };
        // the slack absorbs rounding between this bound and the update's threshold
        let lmax = (1.0 + 1e-12)
            * penalized
                .iter()
                .map(|&j| (2.0 * grad(j)).abs() / self.weights[j])
                .fold(0.0, f64::max);
        if !(lmax > 0.0) || !lmax.is_finite() {
            return Err(Error::DegenerateResponse);
        }
        Ok(lmax)
    }
}

pub(crate) fn geometric_grid(lmax: f64, n: usize, ratio: f64) -> Vec<f64> {
    if n == 1 {
        return vec![lmax];
    }
    let step = ratio.ln() / (n - 1) as f64;
    (0..n).map(|k| lmax * (step * k as f64).exp()).collect()
}

pub fn lasso_cd(
    problem: &PenalizedProblem,
    lambda: f64,
    warm_start: Option<&[f64]>,
) -> Result<LassoFit> {
    lasso_cd_with(problem, lambda, warm_start, &SolverOptions::default())
}

pub fn lasso_cd_with(
    problem: &PenalizedProblem,
    lambda: f64,
    warm_start: Option<&[f64]>,
    opts: &SolverOptions,
) -> Result<LassoFit> {
    problem.validate()?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidInput(format!("lambda {lambda} must be >= 0")));
    }
    let prep = Prepared::new(problem, None);
    let mut beta = match warm_start {
        Some(w) if w.len() == problem.n_cols() => prep.join(w, 0.0),
        Some(w) => {
            return Err(Error::Dimension(format!(
                "warm start has {} entries, expected {}",
                w.len(),
                problem.n_cols()
            )))
        }
        None => vec![0.0; prep.p()],
    };
    let sweeps = prep.solve(lambda, &mut beta, opts)?;
    Ok(prep.fit(lambda, beta, sweeps))
}

/// Warm-started fits along `lambdas` (expected in decreasing order).
pub fn fit_path(
    problem: &PenalizedProblem,
    lambdas: &[f64],
    opts: &SolverOptions,
) -> Result<Vec<LassoFit>> {
    problem.validate()?;
    let prep = Prepared::new(problem, None);
    let mut beta = vec![0.0; prep.p()];
    lambdas
        .iter()
        .map(|&lambda| {
            let sweeps = prep.solve(lambda, &mut beta, opts)?;
            Ok(prep.fit(lambda, beta.clone(), sweeps))
        })
        .collect()
}

/// Default path: 100 geometric values from lambda_max down to 1e-3 lambda_max.
pub fn lambda_grid(problem: &PenalizedProblem) -> Result<Vec<f64>> {
    lambda_grid_with(problem, N_LAMBDA, LAMBDA_MIN_RATIO)
}

pub fn lambda_grid_with(problem: &PenalizedProblem, n: usize, ratio: f64) -> Result<Vec<f64>> {
    problem.validate()?;
    if n == 0 || !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidInput(format!(
            "grid needs n >= 1 and ratio in (0, 1), got {n} and {ratio}"
        )));
    }
    let lmax = Prepared::new(problem, None).lambda_max(&SolverOptions::default())?;
    Ok(geometric_grid(lmax, n, ratio))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::penalized::kkt_residual;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use rand::Rng;

    fn random_problem(seed: u64, m: usize, p: usize) -> PenalizedProblem {
        let mut rng = crate::seed::rng(seed);
        let x = DMatrix::from_fn(m, p, |_, _| rng.random_range(-1.0..1.0));
        let y = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
        PenalizedProblem::new(Design::from_dense(&x).unwrap(), y).unwrap()
    }

    #[test]
    fn gradient_and_residual_updates_agree() {
        let mut rng = crate::seed::rng(21);
        let mut design = Design::new(60);
        for j in 0..12 {
            let start = (j % 3) * 20;
            let len = 20 - j % 5;
            design
                .push_column(
                    start,
                    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect(),
                )
                .unwrap();
        }
        let y = (0..60).map(|_| rng.random_range(-2.0..2.0)).collect();
        let prob = PenalizedProblem::new(design, y)
            .unwrap()
            .with_intercept(true)
            .with_bounds(vec![0.0; 12], vec![1.0; 12])
            .unwrap();
        let fast = Prepared::new(&prob, None);
        let slow = Prepared::new(&prob, None).without_gram();
        assert!(fast.gram.is_some());
        let lmax = fast.lambda_max(&SolverOptions::default()).unwrap();
        for frac in [0.5, 0.1, 0.01] {
            let mut a = vec![0.0; fast.p()];
            let mut b = vec![0.0; slow.p()];
            fast.solve(frac * lmax, &mut a, &SolverOptions::default())
                .unwrap();
            slow.solve(frac * lmax, &mut b, &SolverOptions::default())
                .unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn zero_lambda_recovers_least_squares() {
        let x = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.1, 1.5, 0.3, 0.0, 0.4, 1.0]);
        let truth = [1.0, -2.0, 0.5];
        let y: Vec<f64> = (&x * nalgebra::DVector::from_row_slice(&truth))
            .iter()
            .copied()
            .collect();
        let prob = PenalizedProblem::new(Design::from_dense(&x).unwrap(), y).unwrap();
        let fit = lasso_cd(&prob, 0.0, None).unwrap();
        for (b, t) in fit.coefficients.iter().zip(&truth) {
            assert_abs_diff_eq!(b, t, epsilon = 1e-6);
        }
    }

    #[test]
    fn lambda_max_zeroes_everything() {
        let prob = random_problem(1, 30, 5);
        let grid = lambda_grid(&prob).unwrap();
        assert_eq!(grid.len(), 100);
        let ratios: Vec<f64> = grid.windows(2).map(|w| w[1] / w[0]).collect();
        assert!(grid.windows(2).all(|w| w[1] < w[0]));
        for r in &ratios {
            assert_abs_diff_eq!(*r, ratios[0], epsilon = 1e-12);
        }
        assert_abs_diff_eq!(grid[99] / grid[0], 1e-3, epsilon = 1e-15);
        let fit = lasso_cd(&prob, grid[0], None).unwrap();
        assert!(fit.coefficients.iter().all(|b| *b == 0.0));
        // just below lambda_max something enters
        let fit = lasso_cd(&prob, grid[0] * 0.99, None).unwrap();
        assert!(fit.coefficients.iter().any(|b| *b != 0.0));
    }

    #[test]
    fn doubling_weights_halves_lambda_max() {
        let prob = random_problem(2, 20, 4);
        let l1 = lambda_grid(&prob).unwrap()[0];
        let doubled = prob.clone().with_penalty_weights(vec![2.0; 4]).unwrap();
        let l2 = lambda_grid(&doubled).unwrap()[0];
        assert_abs_diff_eq!(l2, l1 / 2.0, epsilon = 1e-12 * l1);
    }

    #[test]
    fn all_infinite_weights_is_an_error() {
        let prob = random_problem(3, 10, 2)
            .with_penalty_weights(vec![f64::INFINITY; 2])
            .unwrap();
        assert!(matches!(
            lambda_grid(&prob),
            Err(Error::AllPenaltiesInfinite)
        ));
    }

    #[test]
    fn infinite_weight_pins_coefficient() {
        let prob = random_problem(4, 25, 3)
            .with_penalty_weights(vec![1.0, f64::INFINITY, 1.0])
            .unwrap();
        let fit = lasso_cd(&prob, 0.01, None).unwrap();
        assert_eq!(fit.coefficients[1], 0.0);
        assert!(kkt_residual(&prob, &fit) < 1e-5);
    }

    #[test]
    fn intercept_is_unpenalized_and_grid_uses_centered_response() {
        let mut prob = random_problem(5, 40, 3).with_intercept(true);
        for y in prob.response.iter_mut() {
            *y += 10.0;
        }
        let grid = lambda_grid(&prob).unwrap();
        let fit = lasso_cd(&prob, grid[0], None).unwrap();
        assert!(fit.coefficients.iter().all(|b| *b == 0.0));
        let mean = prob.response.iter().sum::<f64>() / 40.0;
        assert_abs_diff_eq!(fit.intercept_value, mean, epsilon = 1e-9);
        let fit = lasso_cd(&prob, grid[30], None).unwrap();
        assert!(kkt_residual(&prob, &fit) < 1e-5);
    }

    #[test]
    fn orthonormal_design_matches_closed_form() {
        // columns of a scaled Hadamard block are orthonormal
        let h = DMatrix::from_row_slice(
            4,
            3,
            &[
                1.0, 1.0, 1.0, 1.0, -1.0, 1.0, 1.0, 1.0, -1.0, 1.0, -1.0, -1.0,
            ],
        ) / 2.0;
        let y = vec![3.0, -1.0, 0.5, 2.0];
        let prob = PenalizedProblem::new(Design::from_dense(&h).unwrap(), y.clone())
            .unwrap()
            .with_bounds(vec![0.0; 3], vec![f64::INFINITY; 3])
            .unwrap();
        for lambda in [0.0, 0.5, 1.0, 3.0] {
            let fit = lasso_cd(&prob, lambda, None).unwrap();
            for j in 0..3 {
                let z: f64 = (0..4).map(|r| h[(r, j)] * y[r]).sum();
                let closed = (z - lambda / 2.0).max(0.0);
                assert_abs_diff_eq!(fit.coefficients[j], closed, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn warm_path_matches_cold_starts() {
        let prob = random_problem(6, 30, 6)
            .with_bounds(vec![0.0; 6], vec![1.0; 6])
            .unwrap();
        let grid = lambda_grid_with(&prob, 20, 1e-3).unwrap();
        let path = fit_path(&prob, &grid, &SolverOptions::default()).unwrap();
        for (fit, &lambda) in path.iter().zip(&grid) {
            let cold = lasso_cd(&prob, lambda, None).unwrap();
            for (a, b) in fit.coefficients.iter().zip(&cold.coefficients) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn iteration_cap_reports_diagnostics() {
        let prob = random_problem(7, 30, 6);
        let opts = SolverOptions {
            tol: 1e-14,
            max_sweeps: 1,
        };
        match lasso_cd_with(&prob, 1e-3, None, &opts) {
            Err(Error::NoConvergence { sweeps, .. }) => assert_eq!(sweeps, 1),
            other => panic!("expected NoConvergence, got {other:?}"),
        }
    }
}
