//! Simulation and control design for zero- to ultralow-field NMR.
//!
//! Spin systems and Hamiltonians live in [`spin`], initial states in
//! [`state`], propagation and acquisition in [`dynamics`], the atomic
//! magnetometer model in [`magnetometer`], closed-form XAₙ spectra in
//! [`analytic`], pulse compilation in [`control`], optimal control in
//! [`grape`] and randomized benchmarking in [`benchmarking`]. [`io`] reads
//! and writes the CSV tables used for artifacts.

pub mod analytic;
pub mod benchmarking;
pub mod constants;
pub mod control;
pub mod dynamics;
pub mod error;
pub mod grape;
pub mod io;
pub mod linalg;
pub mod magnetometer;
pub mod spin;
pub mod state;

pub use error::{Error, Result};
pub use spin::{Axis, SpinModel, SpinSystem};
pub use state::{DensityState, ThermalConfig};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
