use thiserror::Error;

/// Errors surfaced by the library. `Config` maps to CLI exit code 2,
/// everything else to exit code 1.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("moment domain error at x = {x}: {reason}")]
    MomentDomain { x: f64, reason: String },
    #[error("matrix is not regular: {0}")]
    NotRegular(String),
    #[error("size bound exceeded: {0}")]
    SizeBound(String),
    #[error("iteration did not converge: {0}")]
    NonConvergence(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

impl Error {
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
