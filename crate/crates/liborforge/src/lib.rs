//! Arbitrage-free models for discrete-tenor interest rates driven by
//! semimartingales with absolutely continuous characteristics.
//!
//! Forward prices are modeled as exponentials of generic functionals of a
//! driving process. The crate evaluates the no-arbitrage drift conditions
//! exactly for atomic jump measures, transforms characteristics between
//! forward measures, solves the generalized Riccati equations of the affine
//! family, and validates the martingale and positivity properties by
//! reproducible Monte Carlo experiments.
//!
//! Module map:
//! * [`core`] — tenor structures, characteristics, forward-price functionals,
//!   initial curves and the elementary rate conversions.
//! * [`measure_change`] — characteristics of `f(t, X_t)`, exponential measure
//!   tilts and the composed forward-measure characteristics.
//! * [`drift_engine`] — drift-condition residuals, closed-form family drifts
//!   and assumption audits.
//! * [`affine`] — the affine driver on the positive half-line, its Riccati
//!   system and calibration of the terminal parameters.
//! * [`simulation`] — path generation, martingale tests and caplet pricing.
//! * [`cli`] — declarative model documents, subcommands and CSV reports.

pub mod affine;
pub mod cli;
pub mod core;
pub mod drift_engine;
mod error;
pub mod measure_change;
pub mod simulation;

pub use error::{Error, Result};
