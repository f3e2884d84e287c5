use thiserror::Error;

/// Errors raised by the numerical routines of this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid window [{a}, {b}]")]
    InvalidWindow { a: f64, b: f64 },

    #[error("point {x} outside the open interval ({a}, {b})")]
    Domain { x: f64, a: f64, b: f64 },

    #[error("value {value} outside the control set [{min}, {max}]")]
    ControlDomain { value: f64, min: f64, max: f64 },

    #[error("incompatible grids: {0}")]
    Incompatible(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("Picard iteration did not converge after {iterations} iterations (last contraction {contraction:.3e})")]
    Convergence { iterations: usize, contraction: f64 },

    #[error("solution diverged at grid index {index}")]
    Divergence { index: usize },

    #[error("unsupported regime: {0}")]
    UnsupportedRegime(String),

    #[error("instance too large: {0}")]
    InstanceSize(String),

    #[error("optimization failed: {0}")]
    Optimization(String),
}

pub type Result<T> = std::result::Result<T, Error>;
