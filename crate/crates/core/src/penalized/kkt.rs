use super::{LassoFit, PenalizedProblem};

/// Largest violation of the box-constrained lasso optimality conditions at
/// `fit`, measured on unit-norm columns.
///
/// With `g_j = -2 x_j^T r / ||x_j||` and `t_j = lambda w_j / ||x_j||`:
/// an interior nonzero `b_j` needs `g_j + t_j sign(b_j) = 0`; a zero `b_j`
/// needs `g_j + t_j >= 0` if it could increase and `t_j - g_j >= 0` if it
/// could decrease; a coefficient resting on a nonzero bound needs the
/// multiplier to point back into the box. The intercept needs `sum r = 0`.
pub fn kkt_residual(problem: &PenalizedProblem, fit: &LassoFit) -> f64 {
    let x = &problem.design;
    let mut r: Vec<f64> = problem.response.clone();
    for j in 0..x.n_cols() {
        let b = fit.coefficients[j];
        if b != 0.0 {
            x.axpy(j, -b, &mut r);
        }
    }
    for v in r.iter_mut() {
        *v -= fit.intercept_value;
    }
    let mut worst: f64 = 0.0;
    if problem.intercept {
        let m = (r.len() as f64).sqrt().max(1.0);
        worst = worst.max((2.0 * r.iter().sum::<f64>() / m).abs());
    }
    for j in 0..x.n_cols() {
        let b = fit.coefficients[j];
        let w = problem.penalty_weights[j];
        let norm = x.col_sq_norm(j).sqrt();
        if w.is_infinite() || norm == 0.0 {
            if b != 0.0 {
                return f64::INFINITY;
            }
            continue;
        }
        let (lo, hi) = (problem.lower_bounds[j], problem.upper_bounds[j]);
        if b < lo || b > hi {
            return f64::INFINITY;
        }
        let g = -2.0 * x.dot(j, &r) / norm;
        let t = fit.lambda * w / norm;
        let violation = if b == 0.0 {
            let up = if hi > 0.0 { (-(g + t)).max(0.0) } else { 0.0 };
            let down = if lo < 0.0 { (g - t).max(0.0) } else { 0.0 };
            up.max(down)
        } else if b == hi {
            // may only move down; needs g + t <= 0
            (g + t).max(0.0)
        } else if b == lo {
            // may only move up; needs g - t >= 0
            (t - g).max(0.0)
        } else {
            (g + t * b.signum()).abs()
        };
        worst = worst.max(violation);
    }
    worst
}
