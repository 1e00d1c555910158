use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid convolution spec: {0}")]
    InvalidSpec(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("wav parse error in field `{field}`: {reason}")]
    WavParse { field: &'static str, reason: String },

    #[error("unsupported wav {field}: {value}")]
    WavUnsupported { field: &'static str, value: u32 },

    #[error("non-invertible window: overlap-add denominator {min_denominator:e} at sample {index}")]
    NonInvertibleWindow { index: usize, min_denominator: f64 },

    #[error("degenerate attention in head {head}, row {row}: denominator {denominator:e}")]
    DegenerateAttention {
        head: usize,
        row: usize,
        denominator: f64,
    },

    #[error("missing weights: {}", .0.join(", "))]
    MissingWeights(Vec<String>),

    #[error("weight `{name}` has shape {found:?}, expected {expected:?}")]
    WeightShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("malformed weight file: {0}")]
    WeightFile(String),

    #[error("non-finite objective value at coordinate {index}")]
    NonFinite { index: usize },

    #[error("training diverged at iteration {iteration}: loss {loss} exceeds 10x initial {initial}")]
    Diverged {
        iteration: usize,
        loss: f64,
        initial: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
