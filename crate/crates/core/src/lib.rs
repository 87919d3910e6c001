//! Predictive safety monitoring for human upper-body motion.
//!
//! A 3-DoF spring-damper pendulum is coupled to IMU-measured torso motion.
//! Its stiffness, damping and torque are re-estimated every sample from a
//! probability grid of safe motion, and the deviation between model and
//! measurement is scored in the frequency domain into three safety levels.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod dynamics;
pub mod error;
pub mod evaluator;
pub mod io;
pub mod pipeline;
pub mod plot;
pub mod predictor;
pub mod signal;
pub mod synthetic;

pub use error::{PsmError, Result};
