use thiserror::Error;

/// Errors raised by the simulation and control routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid spin system: {0}")]
    InvalidSystem(String),

    #[error("{spins} spins exceeds the configured maximum of {max}")]
    DimensionOverflow { spins: usize, max: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not Hermitian (max deviation {0:e})")]
    NotHermitian(f64),

    #[error("matrix is not unitary (max deviation {0:e})")]
    NotUnitary(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("sinusoidal segment at {freq_hz} Hz needs {needed} substeps, limit is {limit}")]
    SubstepUnderflow { freq_hz: f64, needed: u64, limit: u64 },

    #[error("sensor at distance {distance} m lies inside the sample sphere of radius {radius} m")]
    SensorInsideSample { distance: f64, radius: f64 },

    #[error("Bloch integration unstable: |P| = {0}")]
    Unstable(f64),

    #[error("fit failed: {0}")]
    FitFailed(String),

    #[error("no pulse duration reached F >= {threshold}; best F = {best_fidelity} at {best_duration} s")]
    PulseSearchFailed {
        threshold: f64,
        best_fidelity: f64,
        best_duration: f64,
    },

    #[error("refocusing scheme reached F = {fidelity}, below threshold {threshold}")]
    RefocusFailed { fidelity: f64, threshold: f64 },

    #[error("spins {0} and {1} are not J-coupled")]
    NoCoupling(usize, usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for failures of a numerical procedure, as opposed to invalid input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Unstable(_)
                | Error::FitFailed(_)
                | Error::PulseSearchFailed { .. }
                | Error::RefocusFailed { .. }
        )
    }
}
