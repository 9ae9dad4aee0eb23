use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("series did not converge within {iterations} terms (partial sum {partial} bits)")]
    Estimation { partial: f64, iterations: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("no generic matrix found after {0} draws")]
    Generation(usize),

    #[error("singular transform: {0}")]
    Singular(String),

    #[error("rank-deficient samples: {0}")]
    RankDeficient(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("input exceeds the power constraint: mean {mean} > 1.05 * {power}")]
    Power { mean: f64, power: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
