//! Simulation and interference-adjusted treatment-effect estimation for
//! experiments where units share ephemeral team sessions.
//!
//! Randomly assigned players are matched into short-lived teams; one treated
//! member contaminates the whole session, so initially-control players can
//! receive the treatment anyway. This crate provides:
//!
//! - a data model for players, sessions, the contamination rule, and the
//!   three receipt groups (treatment / control-mixed / control-control);
//! - a synthetic-experiment generator with analytic ground truth;
//! - multiclass propensity models (softmax-linear and gradient-boosted trees)
//!   for the truncated exposure level;
//! - naive and inverse-probability-weighted (Hájek) effect estimators;
//! - a seeded Monte Carlo harness comparing estimators against the truth.

pub mod domain;
pub mod error;
pub mod estimators;
pub mod evaluation;
pub mod propensity;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
