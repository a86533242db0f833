use std::path::PathBuf;

/// Errors raised anywhere in the quantification toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("matrix is not positive definite even with jitter {max_jitter:e}")]
    NotPositiveDefinite { max_jitter: f64 },

    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),

    #[error("division by zero: baseline sample {index} is zero")]
    DivisionByZero { index: usize },

    #[error("missing baseline for reference state damage={damage} load={load}")]
    MissingBaseline { damage: f64, load: f64 },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("state grid is empty")]
    EmptyGrid,

    #[error("covariate mismatch: {0}")]
    CovariateMismatch(String),

    #[error("optimizer failure: {0}")]
    OptimizerFailure(String),

    #[error("degenerate denominator: {0}")]
    DegenerateDenominator(String),

    #[error("missing class-2 reference for predicted damage {damage}")]
    MissingClass2Reference { damage: f64 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short machine-readable tag, used by the CLI's one-line error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::DimensionMismatch { .. } => "dimension-mismatch",
            Error::LengthMismatch(_) => "length-mismatch",
            Error::NotPositiveDefinite { .. } => "not-positive-definite",
            Error::DegenerateSignal(_) => "degenerate-signal",
            Error::DivisionByZero { .. } => "division-by-zero",
            Error::MissingBaseline { .. } => "missing-baseline",
            Error::Parse { .. } => "parse",
            Error::Schema(_) => "schema",
            Error::EmptyGrid => "empty-grid",
            Error::CovariateMismatch(_) => "covariate-mismatch",
            Error::OptimizerFailure(_) => "optimizer-failure",
            Error::DegenerateDenominator(_) => "degenerate-denominator",
            Error::MissingClass2Reference { .. } => "missing-class2-reference",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
