//! Trajectory forecasting as ranking over a clustered trajectory bank.

pub mod bank;
pub mod dataset;
pub mod encoders;
pub mod error;
pub mod inference;
pub mod kmeans;
pub mod metrics;
pub mod mips;
pub mod synth;
pub mod tape;
pub mod trainer;
pub mod types;

pub use error::{Error, Result};
