use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not Hermitian (max |M - M†| = {defect:e})")]
    NotHermitian { defect: f64 },

    #[error("{0} did not converge")]
    NoConvergence(&'static str),

    #[error("non-finite {what} at t = {t}")]
    NonFinite { what: &'static str, t: f64 },

    #[error("jump on channel {channel} at t = {t} from a dark state (‖Lψ‖ ≈ 0)")]
    DarkStateJump { channel: usize, t: f64 },

    #[error("step too large: jump probability {probability:.4} on channel {channel} at t = {t} exceeds {limit}")]
    StepTooLarge {
        channel: usize,
        t: f64,
        probability: f64,
        limit: f64,
    },

    #[error("trajectory {index} failed (master seed {seed}): {source}")]
    TrajectoryFailed {
        index: u64,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("expression error: {0}")]
    Expression(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("resource limit: {0}")]
    ResourceLimit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
