use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = FsoError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum FsoError {
    /// An input lies outside the domain of the model.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("quadrature did not converge to rel. tol {tol:e} on [{a}, {b}]")]
    Integration { a: f64, b: f64, tol: f64 },

    #[error("need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("trace of {requested} samples exceeds the in-memory budget of {budget}; use streaming generation")]
    TraceTooLong { requested: u64, budget: u64 },

    #[error("channel trace covers {available} samples but sample index {needed} was requested")]
    TraceTooShort { needed: usize, available: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("adaptive threshold estimation found only {found} distinct levels")]
    DegenerateClusters { found: usize },

    #[error("no received samples for PAM-4 level {0}")]
    MissingLevel(usize),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("tracking loop diverged at t = {time_s} s (|offset| = {offset_m} m)")]
    Unstable { time_s: f64, offset_m: f64 },

    #[error("unknown sweep axis `{axis}`; valid axes: {valid}")]
    UnknownAxis { axis: String, valid: String },

    #[error("unknown scenario preset `{0}`")]
    UnknownPreset(String),

    #[error("unknown config key `{0}`")]
    UnknownKey(String),

    #[error("invalid value for `{key}`: {reason}")]
    InvalidValue { key: String, reason: String },

    #[error("malformed input: {0}")]
    Format(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<FsoError>,
    },
}

impl FsoError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        FsoError::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FsoError::Io {
            path: path.into(),
            source,
        }
    }
}

/// Attach pipeline stage attribution to an error.
pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| FsoError::Stage {
            stage,
            source: Box::new(e),
        })
    }
}
