//! Domain types for the spatiotemporal autoregressive model
//! `y_t = W y_t + a_t + e_t` and its reduced form `y_t = S (a_t + e_t)`,
//! `S = (I - W)^-1`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Power iteration cap for [`spectral_radius`].
pub const POWER_MAX_ITER: usize = 10_000;
/// Relative tolerance for [`spectral_radius`].
pub const POWER_TOL: f64 = 1e-10;

const ROW_SUM_TOL: f64 = 1e-12;

/// Nonnegative `n x n` weights with a zero diagonal and entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialWeightMatrix {
    weights: DMatrix<f64>,
    row_standardized: bool,
}

impl SpatialWeightMatrix {
    pub fn new(weights: DMatrix<f64>) -> Result<Self> {
        if !weights.is_square() {
            return Err(Error::Dimension(format!(
                "weights must be square, got {}x{}",
                weights.nrows(),
                weights.ncols()
            )));
        }
        if weights.nrows() == 0 {
            return Err(Error::InvalidInput("weights matrix is empty".into()));
        }
        for i in 0..weights.nrows() {
            if weights[(i, i)] != 0.0 {
                return Err(Error::InvalidInput(format!(
                    "diagonal entry ({i}, {i}) is {} but must be 0",
                    weights[(i, i)]
                )));
            }
        }
        if let Some((idx, v)) = weights
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            let n = weights.nrows();
            return Err(Error::InvalidInput(format!(
                "entry ({}, {}) = {v} is outside [0, 1]",
                idx % n,
                idx / n
            )));
        }
        Ok(Self {
            weights,
            row_standardized: false,
        })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            weights: DMatrix::zeros(n, n),
            row_standardized: false,
        }
    }

    /// Row-standardizes a nonnegative adjacency matrix. The diagonal is
    /// cleared first; rows without links stay zero.
    pub fn row_standardized(mut adjacency: DMatrix<f64>) -> Result<Self> {
        if !adjacency.is_square() {
            return Err(Error::Dimension("adjacency must be square".into()));
        }
        if adjacency.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput(
                "adjacency entries must be finite and nonnegative".into(),
            ));
        }
        let n = adjacency.nrows();
        for i in 0..n {
            adjacency[(i, i)] = 0.0;
            let sum: f64 = adjacency.row(i).sum();
            if sum > 0.0 {
                adjacency.row_mut(i).scale_mut(1.0 / sum);
            }
        }
        let mut w = Self::new(adjacency)?;
        w.row_standardized = true;
        Ok(w)
    }

    /// `rho * W`. Scaling by anything but 1 drops the row-standardized flag.
    pub fn scaled(&self, rho: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::InvalidInput(format!(
                "scale factor {rho} would leave [0, 1]"
            )));
        }
        let mut w = Self::new(&self.weights * rho)?;
        w.row_standardized = self.row_standardized && rho == 1.0;
        Ok(w)
    }

    pub fn n(&self) -> usize {
        self.weights.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.weights[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.weights
    }

    pub fn is_row_standardized(&self) -> bool {
        self.row_standardized
            && (0..self.n()).all(|i| {
                let s = self.weights.row(i).sum();
                s == 0.0 || (s - 1.0).abs() <= ROW_SUM_TOL
            })
    }

    /// Number of off-diagonal nonzero entries.
    pub fn link_count(&self) -> usize {
        self.weights.iter().filter(|v| **v != 0.0).count()
    }

    pub fn spectral_radius(&self) -> Result<f64> {
        spectral_radius(&self.weights)
    }
}

/// `T x n` observations; rows are time points, columns are locations.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelObservations {
    values: DMatrix<f64>,
}

impl PanelObservations {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::InvalidInput("panel must be nonempty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "panel contains non-finite values".into(),
            ));
        }
        Ok(Self { values })
    }

    pub fn t_len(&self) -> usize {
        self.values.nrows()
    }

    pub fn n(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        self.values.column(i).iter().copied().collect()
    }

    /// Reorders locations: column `k` of the result is column `perm[k]` here.
    pub fn permute_columns(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n() {
            return Err(Error::Dimension("permutation length differs from n".into()));
        }
        let values = DMatrix::from_fn(self.t_len(), self.n(), |t, k| self.values[(t, perm[k])]);
        Ok(Self { values })
    }
}

/// Piecewise-constant local means `a[t, i]` and the derived change-point sets.
///
/// Time instants exposed by this type are 1-based. `change_points(i)`
/// holds every `tau` in `1..T` with `a[tau, i] != a[tau + 1, i]`, so the new
/// level starts at instant `tau + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanLevelSchedule {
    levels: DMatrix<f64>,
    change_points: Vec<Vec<usize>>,
}

impl MeanLevelSchedule {
    pub fn from_levels(levels: DMatrix<f64>) -> Result<Self> {
        if levels.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("levels must be finite".into()));
        }
        let change_points = (0..levels.ncols())
            .map(|i| {
                (1..levels.nrows())
                    .filter(|&tau| levels[(tau - 1, i)] != levels[(tau, i)])
                    .collect()
            })
            .collect();
        Ok(Self {
            levels,
            change_points,
        })
    }

    /// Levels held constant over `t_len` time points.
    pub fn constant(t_len: usize, levels: &[f64]) -> Result<Self> {
        Self::from_levels(DMatrix::from_fn(t_len, levels.len(), |_, i| levels[i]))
    }

    pub fn levels(&self) -> &DMatrix<f64> {
        &self.levels
    }

    pub fn change_points(&self, i: usize) -> &[usize] {
        &self.change_points[i]
    }

    pub fn t_len(&self) -> usize {
        self.levels.nrows()
    }

    pub fn n(&self) -> usize {
        self.levels.ncols()
    }
}

/// A fully specified data-generating process.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub weights: SpatialWeightMatrix,
    pub schedule: MeanLevelSchedule,
    pub noise_sd: f64,
}

impl ModelSpec {
    pub fn new(
        weights: SpatialWeightMatrix,
        schedule: MeanLevelSchedule,
        noise_sd: f64,
    ) -> Result<Self> {
        if weights.n() != schedule.n() {
            return Err(Error::Dimension(format!(
                "weights are {0}x{0} but the schedule has {1} locations",
                weights.n(),
                schedule.n()
            )));
        }
        if !(noise_sd.is_finite() && noise_sd >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "noise sd {noise_sd} must be >= 0"
            )));
        }
        let rho = weights.spectral_radius()?;
        if rho >= 1.0 {
            return Err(Error::NotInvertible {
                spectral_radius: rho,
            });
        }
        Ok(Self {
            weights,
            schedule,
            noise_sd,
        })
    }
}

/// Largest eigenvalue modulus of a nonnegative square matrix.
///
/// Runs power iteration on `M + I`: for nonnegative `M` the Perron root is
/// the only eigenvalue on the spectral circle of the shifted matrix, so the
/// iteration cannot oscillate on periodic patterns such as `[[0, a], [a, 0]]`.
/// The iterate stays strictly positive, which gives the Collatz-Wielandt
/// bracket `min_i (Mx)_i / x_i <= rho <= max_i (Mx)_i / x_i` as a
/// stopping rule. Reducible matrices whose bracket never closes stop once
/// the norm ratio is stationary.
///
/// When neither rule fires within the iteration cap (nilpotent or badly
/// reducible patterns converge only polynomially) the result comes from the
/// eigenvalues of a real Schur decomposition instead.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    match power_iteration(m) {
        Err(e @ Error::SpectralRadius { .. }) => m
            .clone()
            .try_schur(1e-12, 100_000)
            .map(|s| {
                s.complex_eigenvalues()
                    .iter()
                    .map(|z| z.norm())
                    .fold(0.0, f64::max)
            })
            .ok_or(e),
        other => other,
    }
}

fn power_iteration(m: &DMatrix<f64>) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::Dimension(
            "spectral radius needs a square matrix".into(),
        ));
    }
    if m.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidInput(
            "power iteration requires finite nonnegative entries".into(),
        ));
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(0.0);
    }
    let mut x = nalgebra::DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut prev = f64::NAN;
    let mut stationary = 0;
    let mut estimate = 0.0;
    for _ in 0..POWER_MAX_ITER {
        let y = m * &x + &x;
        let (lo, hi) = y
            .iter()
            .zip(x.iter())
            .map(|(a, b)| a / b)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                (lo.min(r), hi.max(r))
            });
        if hi - lo <= POWER_TOL * hi {
            return Ok((0.5 * (hi + lo) - 1.0).max(0.0));
        }
        let norm = y.norm();
        estimate = norm - 1.0;
        if (norm - prev).abs() <= 1e-2 * POWER_TOL * norm {
            stationary += 1;
            if stationary >= 3 {
                return Ok(estimate.max(0.0));
            }
        } else {
            stationary = 0;
        }
        prev = norm;
        x = y / norm;
    }
    Err(Error::SpectralRadius {
        iterations: POWER_MAX_ITER,
        estimate,
        iterate: x.iter().copied().collect(),
    })
}

/// Spectral radius for diagnostics on estimated matrices; `None` when it
/// cannot be computed.
pub(crate) fn spectral_radius_robust(m: &DMatrix<f64>) -> Option<f64> {
    spectral_radius(m).ok()
}

/// `S = (I - W)^-1` by LU solve. Requires `rho(W) < 1`.
pub fn reduced_form(w: &SpatialWeightMatrix) -> Result<DMatrix<f64>> {
    let rho = w.spectral_radius()?;
    if rho >= 1.0 {
        return Err(Error::NotInvertible {
            spectral_radius: rho,
        });
    }
    invert_i_minus(w.matrix(), rho)
}

pub(crate) fn invert_i_minus(w: &DMatrix<f64>, rho: f64) -> Result<DMatrix<f64>> {
    let n = w.nrows();
    let a = DMatrix::identity(n, n) - w;
    let s = a.clone().lu().try_inverse().ok_or(Error::NotInvertible {
        spectral_radius: rho,
    })?;
    let residual = (&a * &s - DMatrix::identity(n, n)).amax();
    if !residual.is_finite() || residual >= 1e-10 {
        return Err(Error::NotInvertible {
            spectral_radius: rho,
        });
    }
    Ok(s)
}

/// Expected panel: row `t` is `S a_t`.
pub fn expected_panel(spec: &ModelSpec) -> Result<DMatrix<f64>> {
    let s = reduced_form(&spec.weights)?;
    Ok(spec.schedule.levels() * s.transpose())
}

/// Serializable dense matrix in row-major order, used by JSON outputs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RowMajor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&DMatrix<f64>> for RowMajor {
    fn from(m: &DMatrix<f64>) -> Self {
        let data = (0..m.nrows())
            .flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)]))
            .collect();
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn queen_5x5() -> SpatialWeightMatrix {
        let mut adj = DMatrix::zeros(25, 25);
        for i in 0..25usize {
            for j in 0..25usize {
                let (ri, ci) = ((i / 5) as i64, (i % 5) as i64);
                let (rj, cj) = ((j / 5) as i64, (j % 5) as i64);
                if i != j && (ri - rj).abs() <= 1 && (ci - cj).abs() <= 1 {
                    adj[(i, j)] = 1.0;
                }
            }
        }
        SpatialWeightMatrix::row_standardized(adj).unwrap()
    }

    fn neumann(w: &DMatrix<f64>, terms: usize) -> DMatrix<f64> {
        let n = w.nrows();
        let mut sum = DMatrix::identity(n, n);
        let mut power = DMatrix::identity(n, n);
        for _ in 1..terms {
            power = &power * w;
            sum += &power;
        }
        sum
    }

    #[test]
    fn spectral_radius_of_zero_matrix_is_zero() {
        assert_eq!(spectral_radius(&DMatrix::zeros(3, 3)).unwrap(), 0.0);
    }

    #[test]
    fn spectral_radius_of_row_stochastic_queen_is_one() {
        let w = queen_5x5();
        assert!(w.is_row_standardized());
        assert_abs_diff_eq!(w.spectral_radius().unwrap(), 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(
            w.scaled(0.5).unwrap().spectral_radius().unwrap(),
            0.5,
            epsilon = 1e-8
        );
    }

    #[test]
    fn spectral_radius_handles_periodic_and_reducible_patterns() {
        let flip = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]);
        assert_abs_diff_eq!(spectral_radius(&flip).unwrap(), 0.5, epsilon = 1e-9);
        // block diagonal with different Perron roots plus a zero row
        let mut m = DMatrix::zeros(5, 5);
        m[(0, 1)] = 0.3;
        m[(1, 0)] = 0.3;
        m[(2, 3)] = 0.7;
        m[(3, 2)] = 0.7;
        assert_abs_diff_eq!(spectral_radius(&m).unwrap(), 0.7, epsilon = 1e-8);
        // nilpotent: power iteration only converges polynomially, the
        // Schur fallback takes over
        let nil = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        assert!(spectral_radius_robust(&nil).unwrap() < 1e-6);
    }

    #[test]
    fn spectral_radius_rejects_negative_entries() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, -0.5, 0.5, 0.0]);
        assert!(matches!(spectral_radius(&m), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn reduced_form_identity_and_two_by_two() {
        let s = reduced_form(&SpatialWeightMatrix::zeros(2)).unwrap();
        assert_eq!(s, DMatrix::identity(2, 2));

        let w =
            SpatialWeightMatrix::new(DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0])).unwrap();
        let s = reduced_form(&w).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]) / 0.75;
        assert_abs_diff_eq!((s - expected).amax(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn reduced_form_matches_neumann_series() {
        let mut rng = crate::seed::rng(11);
        use rand::Rng;
        let raw = DMatrix::from_fn(4, 4, |i, j| if i == j { 0.0 } else { rng.random::<f64>() });
        let w = SpatialWeightMatrix::row_standardized(raw)
            .unwrap()
            .scaled(0.5)
            .unwrap();
        assert_abs_diff_eq!(w.spectral_radius().unwrap(), 0.5, epsilon = 1e-9);
        let s = reduced_form(&w).unwrap();
        let oracle = neumann(w.matrix(), 60);
        assert!((s - oracle).amax() < 1e-8);
    }

    #[test]
    fn reduced_form_rejects_unit_root() {
        let err = reduced_form(&queen_5x5()).unwrap_err();
        match err {
            Error::NotInvertible { spectral_radius } => {
                assert_abs_diff_eq!(spectral_radius, 1.0, epsilon = 1e-8)
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn expected_panel_examples() {
        let sched = MeanLevelSchedule::constant(4, &[3.0, 0.0]).unwrap();
        let spec = ModelSpec::new(SpatialWeightMatrix::zeros(2), sched.clone(), 1.0).unwrap();
        assert_eq!(expected_panel(&spec).unwrap(), *sched.levels());

        let w =
            SpatialWeightMatrix::new(DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0])).unwrap();
        let spec = ModelSpec::new(w, sched, 1.0).unwrap();
        let e = expected_panel(&spec).unwrap();
        for t in 0..4 {
            assert_abs_diff_eq!(e[(t, 0)], 4.0, epsilon = 1e-12);
            assert_abs_diff_eq!(e[(t, 1)], 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn expected_panel_matches_double_loop() {
        use rand::Rng;
        let mut rng = crate::seed::rng(5);
        let raw = DMatrix::from_fn(3, 3, |i, j| if i == j { 0.0 } else { rng.random::<f64>() });
        let w = SpatialWeightMatrix::row_standardized(raw)
            .unwrap()
            .scaled(0.6)
            .unwrap();
        let levels = DMatrix::from_fn(6, 3, |_, _| rng.random_range(-2.0..5.0));
        let spec = ModelSpec::new(
            w.clone(),
            MeanLevelSchedule::from_levels(levels.clone()).unwrap(),
            1.0,
        )
        .unwrap();
        let got = expected_panel(&spec).unwrap();
        let s = reduced_form(&w).unwrap();
        for t in 0..6 {
            for i in 0..3 {
                let mut acc = 0.0;
                for j in 0..3 {
                    acc += s[(i, j)] * levels[(t, j)];
                }
                assert_abs_diff_eq!(got[(t, i)], acc, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn schedule_change_points_follow_tau_convention() {
        let levels = DMatrix::from_column_slice(5, 1, &[0.0, 0.0, 3.0, 3.0, 0.0]);
        let s = MeanLevelSchedule::from_levels(levels).unwrap();
        assert_eq!(s.change_points(0), &[2, 4]);
    }

    #[test]
    fn weight_matrix_validation() {
        let mut m = DMatrix::zeros(2, 2);
        m[(0, 0)] = 0.1;
        assert!(SpatialWeightMatrix::new(m).is_err());
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.5, 0.0, 0.0]);
        assert!(SpatialWeightMatrix::new(m).is_err());
        assert!(ModelSpec::new(
            queen_5x5(),
            MeanLevelSchedule::constant(3, &[0.0; 25]).unwrap(),
            1.0
        )
        .is_err());
    }

    proptest! {
        #[test]
        fn reduced_form_is_nonnegative_with_unit_dominant_diagonal(
            entries in proptest::collection::vec(0.0f64..1.0, 16),
            rho in 0.05f64..0.95,
        ) {
            let raw = DMatrix::from_fn(4, 4, |i, j| if i == j { 0.0 } else { entries[i * 4 + j] });
            let w = SpatialWeightMatrix::row_standardized(raw).unwrap().scaled(rho).unwrap();
            let s = reduced_form(&w).unwrap();
            for i in 0..4 {
                prop_assert!(s[(i, i)] >= 1.0 - 1e-12);
            }
            prop_assert!(s.iter().all(|v| *v >= -1e-12));
        }

        #[test]
        fn constant_schedule_gives_constant_expectation(
            levels in proptest::collection::vec(-5.0f64..5.0, 3),
            rho in 0.0f64..0.9,
        ) {
            let raw = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
            let w = SpatialWeightMatrix::row_standardized(raw).unwrap().scaled(rho).unwrap();
            let spec = ModelSpec::new(w, MeanLevelSchedule::constant(5, &levels).unwrap(), 1.0).unwrap();
            let e = expected_panel(&spec).unwrap();
            for t in 1..5 {
                for i in 0..3 {
                    prop_assert_eq!(e[(t, i)], e[(0, i)]);
                }
            }
        }
    }
}
