use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("undefined name `{0}`")]
    UndefinedName(String),
    #[error("duplicate name `{0}`")]
    DuplicateName(String),
    #[error("no latents declared")]
    NoLatents,
    #[error("cycle detected among latents: {0}")]
    Cycle(String),
    #[error("invalid model graph: {0}")]
    InvalidGraph(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("conditional variance {0:e} is negative beyond tolerance")]
    NegativeVariance(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("unparseable cell at row {row}, column `{column}`: `{value}`")]
    BadCell {
        row: usize,
        column: String,
        value: String,
    },
    #[error("log of nonpositive value {value} in column `{column}` at row {row}")]
    LogDomain {
        row: usize,
        column: String,
        value: f64,
    },
    #[error("recipe line {line}: {message}")]
    Recipe { line: usize, message: String },
    #[error("trace is empty")]
    EmptyTrace,
    #[error("non-finite predictive density for test row {0}")]
    NonFiniteDensity(usize),
    #[error("chain aborted at iteration {iteration}: {message}")]
    ChainAborted { iteration: u64, message: String },
    #[error("epsr needs at least two chains of length two, got {chains} chains of length {length}")]
    TooFewChains { chains: usize, length: usize },
    #[error("epsr undefined: within-chain variance is zero")]
    ZeroWithinVariance,
    #[error("trace format: {0}")]
    TraceFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
