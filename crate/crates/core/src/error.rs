use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot normalize a zero-norm vector")]
    Normalization,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("no eligible candidates in gallery")]
    EmptyGallery,

    #[error("duplicate exam id `{0}`")]
    DuplicateExam(String),

    #[error("insufficient subjects: need {needed}, have {available} ({context})")]
    InsufficientSubjects {
        needed: usize,
        available: usize,
        context: String,
    },

    #[error("distribution has zero variance; skewness and kurtosis are undefined")]
    DegenerateDistribution,

    #[error("outcome set is empty")]
    EmptyOutcomeSet,

    #[error(
        "FAR {far} is not resolvable with {impostors} impostor scores (need at least {needed})"
    )]
    InsufficientImpostors {
        far: f64,
        impostors: u64,
        needed: u64,
    },

    #[error("at least 2 seeds are required for an interval, got {0}")]
    InsufficientSeeds(usize),

    #[error("cohort statistics are degenerate (sigma {sigma:e} < 1e-9)")]
    DegenerateCohort { sigma: f64 },

    #[error("adaptive cohort too small: need {needed} impostors, found {found}")]
    AdaptiveCohortTooSmall { needed: usize, found: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("both classes are required, only y={0} present")]
    SingleClass(u8),

    #[error("input is empty")]
    EmptyInput,

    #[error("filter spec invalid: {0}")]
    FilterSpec(String),

    #[error("resampling error: {0}")]
    Resample(String),

    #[error("channel {0} has zero standard deviation")]
    DegenerateChannel(usize),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid configuration code `{code}`: {reason}")]
    ConfigCode { code: String, reason: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
