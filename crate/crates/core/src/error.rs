use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error(
        "power iteration did not converge after {iterations} iterations (last estimate {estimate})"
    )]
    SpectralRadius {
        iterations: usize,
        estimate: f64,
        iterate: Vec<f64>,
    },

    #[error("I - W is singular or ill-conditioned (spectral radius {spectral_radius})")]
    NotInvertible { spectral_radius: f64 },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error(
        "coordinate descent did not converge within {sweeps} sweeps at lambda {lambda} \
         (last max change {last_change:e})"
    )]
    NoConvergence {
        sweeps: usize,
        lambda: f64,
        last_change: f64,
    },

    #[error("every penalty weight is infinite; no coefficient can enter the model")]
    AllPenaltiesInfinite,

    #[error("response carries no signal for any penalized column (lambda_max = 0)")]
    DegenerateResponse,

    #[error("cross-validation fold {0} is empty")]
    DegenerateFold(usize),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("every location failed: {0}")]
    AllLocationsFailed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
