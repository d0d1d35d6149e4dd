//! Simulation primitives for multi-user MIMO-OFDM integrated sensing and
//! communication: planar-array geometry, ground-truth channels, resource-grid
//! synthesis, transmit beamforming (with a small dense SDP solver), the
//! receive-side estimation chain and scoring utilities.

pub mod array;
pub mod beamform;
pub mod error;
pub mod gridsim;
pub mod linalg;
pub mod metrics;
pub mod rng;
pub mod scene;
pub mod sensing;

pub use error::{IsacError, Result};

use nalgebra::{DMatrix, DVector};

pub type C64 = num_complex::Complex64;
pub type CVec = DVector<C64>;
pub type CMat = DMatrix<C64>;

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
