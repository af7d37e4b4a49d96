//! Semi-discrete Cahn-Hilliard/Navier-Stokes solver for two-phase flow with
//! non-matched densities: an energy-certified staggered-grid forward model,
//! a discrete adjoint with reduced control gradients, projected-gradient
//! optimal control, and a Yosida-parameter continuation producing limiting
//! C-stationarity residuals.

pub mod adjoint;
pub mod config;
pub mod continuation;
pub mod control;
pub mod error;
pub mod forward;
pub mod grid;
pub mod io;
pub mod ops;
pub mod oracle;
pub mod physics;
pub mod potential;
pub mod runner;
pub mod sparse;

pub use error::{Error, Result};
pub use grid::{inner_cc, inner_fc, CellField, FaceField, GridSpec, TensorField};
pub use physics::{Coefficient, PhysConfig};
pub use potential::{ObstacleInterval, PotentialFamily, PotentialParams, YosidaParams};
