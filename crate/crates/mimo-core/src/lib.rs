//! Multi-indicator, multi-organ evaluation of medical image segmentation
//! outputs.
//!
//! The pipeline: [`metrics`] fills an n x m table of Dice, Hausdorff
//! distance and confidence per (sample, organ); [`bootstrap`] turns each
//! organ's metric columns into thresholds; [`mimo`] screens
//! confidence-sorted prefixes against those thresholds and reports the
//! usability-and-comprehensiveness score; [`calibration`] measures
//! ECE/MCE; [`robustness`] runs the split-half rank-stability experiment;
//! [`synth`] generates controllable test data.

pub mod bootstrap;
pub mod calibration;
pub mod error;
pub mod metrics;
pub mod mimo;
pub mod robustness;
pub mod synth;
pub mod volume;

pub use error::{Error, Result};
