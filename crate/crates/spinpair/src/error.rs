use thiserror::Error;

/// Error type shared by all simulation modules.
#[derive(Debug, Error)]
pub enum SpinError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Hilbert-space dimension above the dense-solver budget.
    #[error("capacity exceeded: Hilbert dimension {dim} > {max}")]
    Capacity { dim: usize, max: usize },

    #[error("bracketing failed: {0}")]
    Bracketing(String),

    #[error("fit failed: {0}")]
    FitFailure(String),

    #[error("degenerate rate model: {0}")]
    DegenerateModel(String),

    #[error("undefined polarization: both doublet intensities are zero")]
    UndefinedPolarization,

    #[error("calibration failed: {0}")]
    Calibration(String),
}

pub type Result<T> = std::result::Result<T, SpinError>;
