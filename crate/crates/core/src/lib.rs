//! Periodic orbits of scalar delayed-feedback equations `x' = r f(x(t), x(t - 1))`:
//! simulation, spectral collocation, amplitude continuation, Floquet spectra
//! and the planar reduction `(x(t), x(t - 1))`.

pub mod branch;
pub mod chart;
pub mod curves;
pub mod dual;
pub mod error;
pub mod expr;
pub mod floquet;
pub mod fourier;
pub mod integrate;
pub mod linalg;
pub mod model;
pub mod orbit;
pub mod quadrature;

pub use error::{BoundarySignal, Error, Result};
