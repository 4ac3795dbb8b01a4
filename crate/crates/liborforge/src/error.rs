use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Error taxonomy of the engine. The CLI maps variants onto exit codes:
/// schema errors exit 2, invariant/contract violations exit 3, numerical
/// divergence exits 4.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("numerical divergence: {0}")]
    Divergence(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("simulation failed: {0}")]
    Simulation(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn index(msg: impl Into<String>) -> Self {
        Error::Index(msg.into())
    }

    pub fn invariant(msg: impl Into<String>) -> Self {
        Error::Invariant(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn divergence(msg: impl Into<String>) -> Self {
        Error::Divergence(msg.into())
    }

    pub fn calibration(msg: impl Into<String>) -> Self {
        Error::Calibration(msg.into())
    }

    pub fn simulation(msg: impl Into<String>) -> Self {
        Error::Simulation(msg.into())
    }

    pub fn schema(msg: impl Into<String>) -> Self {
        Error::Schema(msg.into())
    }
}
