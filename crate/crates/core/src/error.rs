use thiserror::Error;

use crate::expr::{EvalError, ParseError};

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Why a periodic solve stopped without producing an orbit, when the reason
/// is a branch boundary rather than a numerical failure.
#[derive(Debug, Clone, PartialEq)]
pub enum BoundarySignal {
    /// The requested amplitude is an equilibrium value.
    Equilibrium { value: f64 },
    /// Amplitude and depth merged: the orbit collapsed onto an equilibrium.
    Collapse { amplitude: f64, depth: f64 },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("model `{model}` at ({u}, {v}): {source}")]
    Eval {
        model: String,
        u: f64,
        v: f64,
        source: EvalError,
    },
    #[error("model `{model}` is not certified: {reason}")]
    NotCertified { model: String, reason: String },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("time {t} outside covered range [{lo}, {hi}]")]
    OutOfRange { t: f64, lo: f64, hi: f64 },
    #[error("blow-up at t = {t}: |x| = {value}")]
    BlowUp { t: f64, value: f64 },
    #[error("trajectory left the certified domain at t = {t}: (u, v) = ({u}, {v})")]
    DomainExit { t: f64, u: f64, v: f64 },
    #[error("Newton iteration diverged after {iterations} steps (residual {residual:e})")]
    NewtonDivergence { iterations: usize, residual: f64 },
    #[error("period {p} outside (0, {p_max}]")]
    PeriodOutOfRange { p: f64, p_max: f64 },
    #[error("branch boundary reached: {0:?}")]
    Boundary(BoundarySignal),
    #[error("not a simple oscillation: {0}")]
    NotSimpleOscillation(String),
    #[error("rescaling with m = {m} is singular: 1 + m p = {factor}")]
    SingularRescaling { m: i64, factor: f64 },
    #[error("no Hopf root: {0}")]
    NoHopfRoot(String),
    #[error("linear algebra failure: {0}")]
    Linalg(String),
    #[error("chart: {0}")]
    Chart(String),
    #[error("point ({u}, {v}) lies outside the annulus covered by the chart")]
    OutsideAnnulus { u: f64, v: f64 },
    #[error("curve {id} is not simple: segments {i} and {j} intersect")]
    CurveNotSimple { id: usize, i: usize, j: usize },
}

impl From<ndarray_linalg::error::LinalgError> for Error {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        Error::Linalg(e.to_string())
    }
}
