//! Iterated invariant extended Kalman filtering on matrix Lie groups.
//!
//! The crate provides the Lie group machinery ([`lie`]), Gaussian beliefs and
//! gain computations ([`belief`]), the KF/EKF/IterEKF/IEKF/IIEKF family
//! ([`filters`]), a solver for equation systems `χ d = y` on a group
//! ([`solver`]), the crane-hook IMU benchmark ([`crane`], [`bench`]) and
//! consistency metrics ([`metrics`]).

pub mod bench;
pub mod belief;
pub mod crane;
pub mod filters;
pub mod lie;
pub mod metrics;
pub mod solver;
