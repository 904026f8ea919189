//! True weighting schemes, the two-group break schedule, and simulation of
//! the spatiotemporal process.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    reduced_form, MeanLevelSchedule, ModelSpec, PanelObservations, SpatialWeightMatrix,
};
use crate::seed;

/// Rectangular lattice; location `i` sits at row `i / cols`, column `i % cols`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
}

impl GridSpec {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols }
    }

    pub fn n(&self) -> usize {
        self.rows * self.cols
    }

    fn cell(&self, i: usize) -> (usize, usize) {
        (i / self.cols, i % self.cols)
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { rows: 5, cols: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    Queen,
    Random,
    Block,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 3] = [SchemeKind::Queen, SchemeKind::Random, SchemeKind::Block];

    pub fn as_str(&self) -> &'static str {
        match self {
            SchemeKind::Queen => "queen",
            SchemeKind::Random => "random",
            SchemeKind::Block => "block",
        }
    }

    pub fn index(&self) -> u64 {
        match self {
            SchemeKind::Queen => 0,
            SchemeKind::Random => 1,
            SchemeKind::Block => 2,
        }
    }
}

impl std::fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "queen" => Ok(SchemeKind::Queen),
            "random" => Ok(SchemeKind::Random),
            "block" => Ok(SchemeKind::Block),
            other => Err(Error::InvalidInput(format!(
                "unknown scheme '{other}' (expected queen, random or block)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub kind: SchemeKind,
    /// Link probability for the random scheme.
    pub link_probability: f64,
    /// Number of blocks for the block scheme.
    pub n_blocks: usize,
    /// Inclusive range of block side lengths.
    pub block_side_range: (usize, usize),
    pub seed: u64,
}

impl SchemeConfig {
    pub fn new(kind: SchemeKind, seed: u64) -> Self {
        Self {
            kind,
            link_probability: 0.2,
            n_blocks: 3,
            block_side_range: (1, 5),
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        match self.kind {
            SchemeKind::Random if !(0.0..=1.0).contains(&self.link_probability) => {
                Err(Error::InvalidInput(format!(
                    "link probability {} outside [0, 1]",
                    self.link_probability
                )))
            }
            SchemeKind::Block
                if self.block_side_range.0 == 0
                    || self.block_side_range.0 > self.block_side_range.1 =>
            {
                Err(Error::InvalidInput(format!(
                    "invalid block side range {:?}",
                    self.block_side_range
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Row-standardized Queen contiguity on the grid.
pub fn gen_queen(grid: GridSpec) -> SpatialWeightMatrix {
    let n = grid.n();
    let adj = DMatrix::from_fn(n, n, |i, j| {
        let (ri, ci) = grid.cell(i);
        let (rj, cj) = grid.cell(j);
        if i != j && ri.abs_diff(rj) <= 1 && ci.abs_diff(cj) <= 1 {
            1.0
        } else {
            0.0
        }
    });
    SpatialWeightMatrix::row_standardized(adj).expect("queen adjacency is a valid 0/1 matrix")
}

/// Independent directed links with probability `cfg.link_probability`.
pub fn gen_random(n: usize, cfg: &SchemeConfig) -> Result<SpatialWeightMatrix> {
    cfg.validate()?;
    let mut rng = seed::rng(cfg.seed);
    let mut adj = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.random::<f64>() < cfg.link_probability {
                adj[(i, j)] = 1.0;
            }
        }
    }
    SpatialWeightMatrix::row_standardized(adj)
}

/// Axis-aligned rectangles of fully connected cells.
pub fn gen_block(grid: GridSpec, cfg: &SchemeConfig) -> Result<SpatialWeightMatrix> {
    cfg.validate()?;
    let mut rng = seed::rng(cfg.seed);
    let (lo, hi) = cfg.block_side_range;
    let rects = (0..cfg.n_blocks)
        .map(|_| {
            let h = rng.random_range(lo..=hi).min(grid.rows);
            let w = rng.random_range(lo..=hi).min(grid.cols);
            let r0 = rng.random_range(0..=grid.rows - h);
            let c0 = rng.random_range(0..=grid.cols - w);
            (r0, c0, h, w)
        })
        .collect::<Vec<_>>();
    Ok(block_matrix(grid, &rects))
}

/// Weights for explicit rectangles `(top_row, left_col, height, width)`.
pub fn block_matrix(grid: GridSpec, rects: &[(usize, usize, usize, usize)]) -> SpatialWeightMatrix {
    let n = grid.n();
    let mut adj = DMatrix::zeros(n, n);
    for &(r0, c0, h, w) in rects {
        let cells: Vec<usize> = (r0..(r0 + h).min(grid.rows))
            .flat_map(|r| (c0..(c0 + w).min(grid.cols)).map(move |c| r * grid.cols + c))
            .collect();
        for &i in &cells {
            for &j in &cells {
                if i != j {
                    adj[(i, j)] = 1.0;
                }
            }
        }
    }
    SpatialWeightMatrix::row_standardized(adj).expect("block adjacency is a valid 0/1 matrix")
}

/// Dispatches on `cfg.kind`.
pub fn generate(grid: GridSpec, cfg: &SchemeConfig) -> Result<SpatialWeightMatrix> {
    match cfg.kind {
        SchemeKind::Queen => Ok(gen_queen(grid)),
        SchemeKind::Random => gen_random(grid.n(), cfg),
        SchemeKind::Block => gen_block(grid, cfg),
    }
}

/// First instant (1-based) at which a level introduced at fractional time
/// `frac * T` holds.
pub fn break_instant(t_len: usize, frac: f64) -> usize {
    (frac * t_len as f64).ceil() as usize
}

/// Two-group schedule: the first `group1_size` locations move 0 -> 3 -> 0 at
/// `0.5T` and `0.75T`; the rest move 0 -> 7 at `0.25T`.
pub fn build_break_schedule(
    n: usize,
    t_len: usize,
    group1_size: usize,
) -> Result<MeanLevelSchedule> {
    if group1_size >= n {
        return Err(Error::InvalidInput(format!(
            "group 1 size {group1_size} must be below n = {n}"
        )));
    }
    if t_len < 8 {
        return Err(Error::InvalidInput(format!(
            "T = {t_len} must be at least 8"
        )));
    }
    let quarter = break_instant(t_len, 0.25);
    let half = break_instant(t_len, 0.5);
    let three_q = break_instant(t_len, 0.75);
    let levels = DMatrix::from_fn(t_len, n, |row, i| {
        let t = row + 1;
        if i < group1_size {
            if (half..three_q).contains(&t) {
                3.0
            } else {
                0.0
            }
        } else if t >= quarter {
            7.0
        } else {
            0.0
        }
    });
    MeanLevelSchedule::from_levels(levels)
}

/// Draws `y_t = S (a_t + e_t)` with `e_t ~ N(0, sd^2 I)`.
pub fn simulate_panel(spec: &ModelSpec, seed: u64) -> Result<PanelObservations> {
    let s = reduced_form(&spec.weights)?;
    let levels = spec.schedule.levels();
    let mut rng = seed::rng(seed);
    let (t_len, n) = (levels.nrows(), levels.ncols());
    // draw in time-major order so a longer horizon extends a shorter one
    let mut shocks = DMatrix::zeros(t_len, n);
    for t in 0..t_len {
        for i in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            shocks[(t, i)] = levels[(t, i)] + spec.noise_sd * z;
        }
    }
    PanelObservations::new(shocks * s.transpose())
}
