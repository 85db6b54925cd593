use thiserror::Error;

/// Unified error type for the whole pipeline.
///
/// Variants split into two broad families that the CLI maps to exit codes:
/// configuration problems (bad parameters, malformed expressions, dimension
/// mismatches) and numerical failures discovered at run time (degenerate
/// variances, non-finite evaluations, too many dropped replications).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("raw moment of order {order} for base {base} exceeds the configured ceiling {ceiling}")]
    UnsupportedDegree {
        base: usize,
        order: u32,
        ceiling: u32,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate statistic: {0}")]
    DegenerateStatistic(String),

    #[error("syntax error at offset {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("unknown variable `{name}` at offset {offset} (variables are z1..zk)")]
    UnknownVariable { name: String, offset: usize },

    #[error("non-finite evaluation: {0}")]
    NonFinite(String),

    #[error("{dropped} of {total} replications dropped ({percent:.2}%), above the 1% ceiling")]
    TooManyDropped {
        dropped: u64,
        total: u64,
        percent: f64,
    },

    #[error("unsupported conditioning structure: {0}")]
    UnsupportedConditioning(String),
}

pub type Result<T> = std::result::Result<T, Error>;
