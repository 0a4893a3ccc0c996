use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("empty line graph")]
    EmptyLineGraph,

    #[error(
        "sub-edge lengths not balanced: edge {short_edge} ({short_km} km per sub-edge) vs edge {long_edge} ({long_km} km per sub-edge), spread {spread} exceeds {tolerance}"
    )]
    LengthBalance {
        short_edge: usize,
        short_km: f64,
        long_edge: usize,
        long_km: f64,
        spread: f64,
        tolerance: f64,
    },

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is not symmetric (asymmetry {0})")]
    NotSymmetric(f64),

    #[error("not positive definite")]
    NotPositiveDefinite,

    #[error("matrix has a negative eigenvalue {0}")]
    NegativeEigenvalue(f64),

    #[error("prior requires positive λ")]
    NonPositiveLambda,

    #[error("degenerate smoother; increase λ")]
    DegenerateSmoother,

    #[error("GCV undefined")]
    GcvUndefined,

    #[error("fixed point did not converge after {iterations} iterations (residual {residual})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("symmetric eigensolver returned non-finite values")]
    EigenFailed,

    #[error("approximation undefined at zero resolution")]
    ZeroResolution,

    #[error("spectral bound violated: {0}")]
    BoundViolated(String),

    #[error("level mismatch: expected {expected}, found {found}")]
    LevelMismatch { expected: String, found: String },

    #[error("disconnected query")]
    DisconnectedQuery,

    #[error("invalid route query: {0}")]
    InvalidQuery(String),

    #[error("replication {index} failed: {source}")]
    Replication { index: usize, source: Box<Error> },
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NotPositiveDefinite
            | Error::NegativeEigenvalue(_)
            | Error::DegenerateSmoother
            | Error::GcvUndefined
            | Error::NoConvergence { .. }
            | Error::EigenFailed
            | Error::BoundViolated(_) => true,
            Error::Replication { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
