//! Joint estimation of a full spatial weights matrix and location-specific
//! mean-level breaks for spatiotemporal autoregressive panels.
//!
//! The estimator runs in two steps. [`detect`] screens each location's series
//! for candidate change instants with an adaptive lasso on a cumulative-step
//! design. [`joint`] then fits break magnitudes (restricted to those
//! candidates) together with every off-diagonal spatial weight in one
//! box-constrained adaptive lasso. [`simgen`], [`evaluate`] and
//! [`montecarlo`] reproduce the simulation study; [`panel_io`] covers CSV
//! ingestion and the rank-based normal transform.

// Index loops mirror the linear algebra; NaN-aware negated comparisons are deliberate.
#![allow(
    clippy::needless_range_loop,
    clippy::neg_cmp_op_on_partial_ord,
    clippy::type_complexity
)]

pub mod detect;
pub mod error;
pub mod evaluate;
pub mod joint;
pub mod model;
pub mod montecarlo;
pub mod panel_io;
pub mod penalized;
pub mod seed;
pub mod simgen;

pub use error::{Error, Result};
pub use model::{
    expected_panel, reduced_form, spectral_radius, MeanLevelSchedule, ModelSpec, PanelObservations,
    SpatialWeightMatrix,
};
pub use penalized::{LassoFit, PenalizedProblem, SolverOptions};
