use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed NIfTI header: {0}")]
    Format(String),

    #[error("unsupported NIfTI content: {0}")]
    Unsupported(String),

    #[error("truncated voxel payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("grid alignment mismatch: {0}")]
    Alignment(String),

    #[error("volume of {dims:?} does not fit in a {target}^3 cube")]
    Oversize { dims: [usize; 3], target: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("metric undefined on {undefined} of {attempts} bootstrap resamples")]
    UnstableMetric { undefined: usize, attempts: usize },

    #[error("synthesis failed after {retries} attempts: {reason}")]
    SynthesisFailed { retries: usize, reason: String },

    #[error("lesion injection failed after {retries} attempts")]
    InjectionFailed { retries: usize },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("not found: {0}")]
    NotFound(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
