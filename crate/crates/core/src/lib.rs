//! Monte Carlo toolkit for extremes of conjunctions of stationary Gaussian
//! processes.
//!
//! The crate is organised bottom-up:
//!
//! * [`stats`] — scalar normal-tail helpers, deterministic stream splitting,
//!   estimates with uncertainty, and goodness-of-fit statistics.
//! * [`gauss`] — exact samplers for stationary Gaussian paths and fractional
//!   Brownian motion on uniform grids (circulant embedding with a dense
//!   Cholesky fallback), plus sampler validation utilities.
//! * [`limit`] — the drifted fractional limit ensembles that govern local
//!   behaviour above high thresholds, with certified series truncation.
//! * [`pickands`] — discrete-gap estimation of the generalized Pickands
//!   constant with common-random-number grids and gap-to-zero extrapolation.
//! * [`extremes`] — direct Monte Carlo for threshold-crossing probabilities,
//!   closed-form asymptotic evaluators, ratio diagnostics, and conditional
//!   excursion sampling.
//! * [`sojourn`] — time spent above a level: empirical functionals and their
//!   limiting occupation-time law.

pub mod error;
pub mod extremes;
pub mod gauss;
pub mod limit;
pub mod pickands;
pub mod sojourn;
pub mod stats;

pub use error::{Error, Result};
pub use stats::{Estimate, RandomStream, StreamFamily};
