//! Loosely coupled GNSS/IMU navigation.
//!
//! A strapdown INS is propagated at IMU rate and corrected by a 15-state
//! closed-loop error-state EKF using GNSS position and velocity fixes. The
//! crate also contains the noise model and calibration tools for consumer
//! IMUs, static alignment, and a simulation harness for studying how
//! initial attitude errors propagate through the filter.

// Negated comparisons deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alignment;
pub mod ekf;
pub mod error;
pub mod geo;
pub mod io;
pub mod scenario;
pub mod sensors;
pub mod strapdown;

pub use error::{Error, Result};
