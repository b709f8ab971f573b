//! Lateral control stack for full-scale autonomous oval racing.
//!
//! The crate bundles everything needed to run a high-speed path-tracking
//! controller against a nonlinear vehicle simulation:
//!
//! * [`track`] — raceline ingestion, path projection, tracking errors and
//!   lookahead scheduling,
//! * [`tire`] — Pacejka and linear lateral tire forces, slip angles and
//!   IMU-based axle-force reconstruction,
//! * [`lpv`] — the parameter-varying error-state model and its exact
//!   zero-order-hold discretization,
//! * [`qp`] — a dense operator-splitting QP solver with warm starting,
//! * [`mpc`] — the condensed Gauss-Newton real-time-iteration controller,
//! * [`backup`] — pure-pursuit steering, PID speed control and the
//!   MPC/fallback arbitration logic,
//! * [`plant`] — the ground-truth nonlinear single-track plant,
//! * [`sysid`] — Pacejka parameter identification from logged runs,
//! * [`sim`] / [`analyze`] — the closed-loop scenario harness, telemetry
//!   and lap-metric analysis,
//! * [`trackgen`] — synthetic raceline generators (straight, circle, oval).

// `!(x > 0.0)` in the validators rejects NaN alongside the out-of-range
// values; the suggested `partial_cmp` rewrite would not.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analyze;
pub mod backup;
pub mod config;
pub mod lpv;
pub mod mpc;
pub mod plant;
pub mod qp;
pub mod sim;
pub mod sysid;
pub mod tire;
pub mod track;
pub mod trackgen;

pub use lpv::{DiscreteLpv, ErrorState, SchedulingParams};
pub use qp::{DenseQp, QpSolution, QpStatus};
pub use tire::{PacejkaAxleParams, VehicleParams};
pub use track::{Raceline, TrackingErrors, Waypoint};

/// Standard gravity [m/s^2], used by the banking terms everywhere.
pub const GRAVITY: f64 = 9.80665;

/// Speed floor [m/s] below which the lateral model is ill-conditioned.
pub const V_X_MIN: f64 = 1.0;
