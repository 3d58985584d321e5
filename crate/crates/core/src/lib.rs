//! Robust direct ROI prediction for budgeted marketing allocation.
//!
//! A two-layer network is trained end to end on randomized-controlled-trial
//! data to score the revenue-to-cost uplift ratio of each individual. MC
//! dropout and a conformal calibration set turn those scores into intervals
//! and recalibrated point estimates that hold up under covariate shift.

pub mod allocation;
pub mod conformal;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod model;
pub mod seed;

pub use error::{RdrpError, Result};
