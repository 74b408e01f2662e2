use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, DppError>;

#[derive(Debug, Error)]
pub enum DppError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported dimension {0} (this operation is implemented for d = 2)")]
    UnsupportedDimension(usize),

    #[error("kernel does not define a DPP: sup of spectral density is {sup:.6} > 1")]
    ExistenceViolated { sup: f64 },

    #[error("degenerate point configuration: correlation matrix is singular")]
    DegenerateConfiguration,

    #[error("erosion by {radius} empties the window")]
    EmptyErosion { radius: f64 },

    #[error("spectral truncation order exceeds the cap {cap} (remaining mass {remaining:.3e})")]
    TruncationFailure { cap: usize, remaining: f64 },

    #[error("sampler stalled after {proposals} proposals for one point")]
    SamplerStall { proposals: u64 },

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("normalizer is not positive ({0})")]
    NormalizerDegenerate(f64),

    #[error("no pairs within the interaction radius")]
    NoPairs,

    #[error("no {order}-tuples within the interaction radius")]
    NoTuples { order: usize },

    #[error("composite likelihood is -inf on the whole parameter box")]
    DegenerateLikelihood,

    #[error("order {order} exceeds the cap {cap}")]
    OrderTooLarge { order: usize, cap: usize },

    #[error("information matrix is not positive definite")]
    InfoNotPd,

    #[error("too many failed replicates: {failed} of {total}")]
    TooManyFailures { failed: usize, total: usize },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl DppError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DppError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a failed estimate.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            DppError::Parse { .. }
                | DppError::Validation(_)
                | DppError::Io { .. }
                | DppError::Json(_)
                | DppError::InvalidArgument(_)
                | DppError::Domain(_)
                | DppError::UnsupportedDimension(_)
                | DppError::ExistenceViolated { .. }
        )
    }
}
