use thiserror::Error;

/// Errors surfaced by grid construction, trajectory integration and the
/// solver loops. Diagnostic *verdicts* (bound checks that fail) are data,
/// not errors; only contract violations and numerical blow-ups land here.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Every validation failure found in a config file, not just the first.
    #[error("configuration rejected:\n{}", .0.join("\n"))]
    ConfigErrors(Vec<String>),

    #[error("trajectory blow-up at s = {s}: non-finite state")]
    TrajectoryBlowup { s: f64 },

    #[error("negative loss rate {rate} at trajectory node s = {s}")]
    NegativeRate { s: f64, rate: f64 },

    #[error("non-finite field value at cell {cell}")]
    NonFinite { cell: usize },

    #[error("solver blow-up at t = {t}, cell {cell}")]
    SolverBlowup { t: f64, cell: usize },

    #[error("iterate negativity {value:e} beyond tolerance at t = {t}")]
    NegativeIterate { t: f64, value: f64 },

    #[error("collision slice of length {got}, lattice expects {expect}")]
    SliceLength { got: usize, expect: usize },

    #[error("scattering direction must be a unit vector (|omega| = {norm})")]
    NonUnitOmega { norm: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("snapshot I/O: {0}")]
    SnapshotIo(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
