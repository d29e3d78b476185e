use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Argument outside the domain of the function (pole, wrong half-plane, ...).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("no convergence after {iterations} iterations (residual {residual:.3e}, last iterate {last})")]
    Convergence {
        iterations: usize,
        residual: f64,
        last: String,
    },

    #[error("bracketing failed: {0}")]
    Bracketing(String),

    #[error("quadrature tolerance not met: achieved {achieved:.3e}, requested {requested:.3e}")]
    Quadrature { achieved: f64, requested: f64 },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("linear algebra failure: {0}")]
    Linalg(String),

    /// A spectral quantity collided with a sample eigenvalue or a pole.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Configuration and input mistakes, as opposed to numerical breakdowns.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::InvalidModel(_) | Error::Io(_) | Error::Csv(_)
        )
    }
}
