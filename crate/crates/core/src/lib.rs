//! Safety-constrained LQR learning for scalar systems with unknown dynamics.
//!
//! The crate is split along the lines of the simulation pipeline:
//!
//! - [`dynamics`]: the scalar plant `x' = a x + b u + w`, stage costs, rollouts,
//!   and the three shipped noise models.
//! - [`controllers`]: truncated linear baseline controllers, the Monte-Carlo
//!   gain optimizer, the penetration threshold and the feasibility checks for
//!   the initial controller and the large-support condition.
//! - [`estimator`]: incremental ridge regression with the self-normalized
//!   confidence radius.
//! - [`safe_ce`]: the two safe certainty-equivalence algorithms (general
//!   baselines with `nu = T^{-1/3}`, large noise with `nu = T^{-1/4}`).
//! - [`lab`]: baseline cost oracle, safety audit, regret sweeps, slope fitting
//!   and CSV/JSON reporting used by the `safe-lqr` binary.

pub mod controllers;
pub mod dynamics;
pub mod error;
pub mod estimator;
pub mod lab;
pub mod rng;
pub mod safe_ce;

pub use error::{Error, Result};
