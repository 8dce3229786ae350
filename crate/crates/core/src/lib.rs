//! Robust batch orbit determination built on truncated Taylor-polynomial algebra.
//!
//! The crate refines an angles-only initial orbit solution and rejects
//! measurement outliers by propagating polynomial uncertainty sets through a
//! multifidelity dynamics model, pruning them against observation bounds, and
//! finishing with damped least-squares and minimum-L1 batch estimators.
//!
//! Module map:
//! * [`dapoly`] — fixed-order multivariate Taylor-polynomial algebra,
//! * [`manifold`] — adaptive domain splitting, nonlinearity indices, merging,
//! * [`astro`] — frames, time, element conversions, Kepler and Lambert solvers,
//! * [`dynamics`] — analytic and numerical propagation, process-noise covariance,
//! * [`obs`] — optical measurement geometry and synthetic observation generation,
//! * [`iod`] — angles-only initial orbit determination with polynomial expansion,
//! * [`pipeline`] — sequential multifidelity propagation, projection, pruning,
//! * [`estimate`] — batch estimators (Levenberg–Marquardt and L1 via simplex).

pub mod astro;
pub mod dapoly;
pub mod dynamics;
pub mod estimate;
pub mod iod;
pub mod linalg;
pub mod manifold;
pub mod obs;
pub mod pipeline;
