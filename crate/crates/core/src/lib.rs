//! Nonstationary stochastic optimization with distributional detection and
//! adaptive restarts.
//!
//! The crate is organised bottom-up:
//!
//! - [`distributions`]: exact piecewise-constant and discrete demand models,
//!   switch/variation budgets and hard-instance generators.
//! - [`empirical`]: incrementally sorted sample windows, empirical CDFs,
//!   two-sample Kolmogorov–Smirnov distances and DKW radii.
//! - [`detection`]: the two-window restart test.
//! - [`losses`]: inner losses, subgradients and exact optimization oracles.
//! - [`policies`]: the uncensored, censored and general restart policies plus
//!   the SAA / MSAA / RSAA baselines.
//! - [`harness`]: simulation driver, dynamic regret, dataset replay and
//!   scaling fits.

// NaN must fail every validation, so checks are written as negated comparisons.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod detection;
pub mod distributions;
pub mod empirical;
mod error;
pub mod harness;
pub mod losses;
pub mod policies;

pub use error::{Error, Result};

/// Seeded generator used for every stochastic component.
pub type SimRng = rand_chacha::ChaCha8Rng;
