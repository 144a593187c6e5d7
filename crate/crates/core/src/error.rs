use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("Euler-angle singularity: |pitch| = {pitch} rad is within the guard band of pi/2")]
    EulerSingularity { pitch: f64 },

    #[error("mass matrix is ill-conditioned (condition number {condition:e})")]
    IllConditioned { condition: f64 },

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("failed to parse config {path}: {message}")]
    ConfigParse { path: String, message: String },

    #[error("invalid config field `{field}`: {reason}")]
    ConfigValidation { field: String, reason: String },

    #[error("plant diverged at t = {time} s (state magnitude {magnitude:e})")]
    Divergence { time: f64, magnitude: f64 },

    #[error("end-effector detached at t = {time} s (closure residual {residual} m)")]
    AttachmentLost { time: f64, residual: f64 },

    #[error("malformed log: {0}")]
    LogFormat(String),

    #[error("plotting failed: {0}")]
    Plot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::ConfigValidation {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
