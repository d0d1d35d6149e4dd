//! Configuration-driven experiment harness for the dedicated versus
//! zero-overhead sensing comparison: scenario loading, Monte Carlo trials,
//! power sweeps and CSV emission.

pub mod config;
pub mod design;
pub mod error;
pub mod experiments;
pub mod output;

pub use config::{ExperimentConfig, Scale, Scheme};
pub use error::CliError;
pub use experiments::Context;
