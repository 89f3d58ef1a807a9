use std::path::PathBuf;

/// Errors raised by the forward model, the optimisation stages and file IO.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate geometry: detector {detector} lies {distance:e} mm from source {source_index}")]
    DegenerateGeometry {
        detector: usize,
        source_index: usize,
        distance: f64,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A time series is (numerically) flat, so its correlation is undefined.
    /// Callers treat the candidate as invalid rather than as a perfect or
    /// neutral match.
    #[error("signal variance {variance:e} below threshold; correlation undefined")]
    VarianceDegenerate { variance: f64 },

    #[error("coarse search produced no valid candidate")]
    EmptySearch,

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("rigid fit failed: best model has {inliers} inliers, {required} required (rms {best_rms:.4} mm)")]
    FitFailed {
        inliers: usize,
        required: usize,
        best_rms: f64,
    },

    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("every masked sensor was dropped as degenerate")]
    AllSensorsDegenerate,

    #[error("config error at `{path}`: {reason}")]
    Config { path: String, reason: String },

    #[error("malformed file {}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn config(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
