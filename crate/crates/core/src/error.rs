use thiserror::Error;

use crate::frequency::FreqPoint;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("Sylvester system is singular (smallest singular value {sigma_min:.3e})")]
    Solvability { sigma_min: f64 },

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("mode matrix is not Hurwitz at {at} (spectral abscissa {abscissa:.6e})")]
    Stability { at: FreqPoint, abscissa: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported fragment: {0}")]
    UnsupportedFragment(String),

    #[error("frequency point outside the sampling set: {0}")]
    Domain(String),

    #[error("aliasing: {samples} samples cannot resolve orders up to {order}; need at least {min_samples}")]
    Aliasing { samples: usize, order: usize, min_samples: usize },

    #[error("integration failed at t = {last_good_time}: {reason}")]
    Integration { last_good_time: f64, reason: String },

    #[error("resource limit: {0}")]
    Resource(String),

    #[error("inconclusive: {0}")]
    Inconclusive(String),

    #[error("invalid model: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
