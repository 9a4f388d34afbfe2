//! Robust fusion of local Kalman estimates when up to `p` of `m`
//! homogeneous sensors may be arbitrarily compromised.
//!
//! - [`system`]: plant simulation, steady-state Kalman filter and its
//!   decomposition into per-sensor local estimators.
//! - [`attack`]: sparse attacks on the local estimates.
//! - [`fusion`]: the L1-penalized fusion estimator and its exact solver.
//! - [`analysis`]: robustness conditions, deviation bounds and recovery
//!   probabilities.
//! - [`harness`]: configuration files and scenario runs.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod attack;
pub mod error;
pub mod fusion;
pub mod harness;
pub mod linalg;
pub mod par;
pub mod system;

pub use error::{Error, Result};
pub use par::Execution;
