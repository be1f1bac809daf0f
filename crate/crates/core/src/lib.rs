//! Local solutions of second-order quasi-linear elliptic systems with a
//! prescribed value and gradient at the origin.
//!
//! The solver shifts the jet to zero, freezes the leading coefficients at the
//! origin, rewrites the system in Poisson form and runs a fixed-point
//! iteration of a jet-corrected Newtonian-potential map on a discretized ball,
//! shrinking the ball until the map contracts.
//!
//! Module map:
//!
//! * [`grid`]: ball lattice, finite-difference stencils, Hölder pair sets.
//! * [`holder`]: discrete weighted Hölder norms and the norm inequalities.
//! * [`potential`]: fundamental solution, Newtonian potential and its derivatives.
//! * [`reduce`]: jet shift and coordinate change to Poisson form.
//! * [`picard`]: the contraction map and the radius-adaptive fixed-point driver.
//! * [`systems`]: built-in geometric systems and target charts.
//! * [`kobayashi`]: upper bounds for the harmonic-map Kobayashi metric.
//! * [`lemmas`]: the norm-inequality and potential sweeps behind `verify-lemmas`.
//! * [`oracle`]: closed-form and brute-force references used by tests.
//! * [`cli`]: run configuration, execution and report serialization.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod grid;
pub mod holder;
pub mod kobayashi;
pub mod lemmas;
pub mod oracle;
pub mod par;
pub mod picard;
pub mod potential;
pub mod reduce;
pub mod systems;

pub use error::{Error, Result};
pub use grid::{BallGrid, MultiIndex, PairSet, Point, ScalarField, VectorField};
