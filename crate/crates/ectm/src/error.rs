//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A sample field is NaN, infinite, or otherwise out of its domain.
    #[error("invalid sample at index {index}: {reason}")]
    InvalidSample { index: usize, reason: String },

    /// Sample times must be strictly increasing.
    #[error("non-monotonic time at sample {index}: t={t} follows t={prev}")]
    NonMonotonicTime { index: usize, t: f64, prev: f64 },

    /// Consecutive sample spacing deviates more than 1% from the nominal dt.
    #[error(
        "non-uniform sampling grid at index {index}: step {step} s vs nominal {nominal} s \
         (deviation {deviation:.3}%, tolerance 1%); resample the cycle first"
    )]
    GridNotUniform {
        index: usize,
        step: f64,
        nominal: f64,
        deviation: f64,
    },

    #[error("invalid capacity q0={0} Ah (must be > 0)")]
    InvalidCapacity(f64),

    #[error("invalid initial SOC {0} (must lie in [0, 1])")]
    InvalidSoc(f64),

    #[error("invalid sampling interval dt={0} s (must be > 0)")]
    InvalidInterval(f64),

    #[error("cycle too short: {got} samples, need at least {required}")]
    TooShortCycle { required: usize, got: usize },

    /// Feature/parameter vector lengths disagree.
    #[error("dimension mismatch: expected {expected} values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// The linear parameter vector cannot be mapped back to physical form.
    #[error("linear parameters not invertible to physical form: {0}")]
    NonInvertible(String),

    #[error("invalid polynomial: {0}")]
    InvalidPolynomial(String),

    #[error(
        "design matrix is ill-conditioned (condition number {condition:.3e} exceeds \
         {threshold:.1e}); near-dependent columns: {}",
        columns.join(", ")
    )]
    IllConditioned {
        condition: f64,
        threshold: f64,
        columns: Vec<String>,
    },

    #[error(
        "box-constrained solver did not converge within {max_iter} iterations \
         (KKT residual {kkt_residual:.3e})"
    )]
    NonConvergence {
        max_iter: usize,
        kkt_residual: f64,
        last_iterate: Vec<f64>,
    },

    #[error("invalid box constraints: lower[{index}]={lower} > upper[{index}]={upper}")]
    InvalidBox {
        index: usize,
        lower: f64,
        upper: f64,
    },

    /// Input file does not match the expected schema.
    #[error("schema error: {0}")]
    Schema(String),

    #[error("missing column {column:?} (mapped by {mapped_by}) in {path}")]
    MissingColumn {
        column: String,
        mapped_by: String,
        path: String,
    },

    #[error("no usable samples in {path}")]
    EmptyCycle { path: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    /// A loaded model and a target cycle disagree on parameter count.
    #[error("model/cycle mismatch: model has {model} parameters, cycle features give {cycle}")]
    ModelMismatch { model: usize, cycle: usize },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
