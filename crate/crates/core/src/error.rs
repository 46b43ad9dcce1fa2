use thiserror::Error;

/// Errors raised by the estimation engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("tick size must be positive, got {0}")]
    NonPositiveTick(f64),
    #[error("price {price} is not on the {tick} tick grid")]
    OffGrid { price: f64, tick: f64 },
    #[error("price must be positive, got {0}")]
    NonPositivePrice(f64),
    #[error("trade price {0} is not a level of the order book")]
    NotABookLevel(f64),
    #[error("order book levels must be non-empty and strictly increasing")]
    InvalidBook,
    #[error("bid {bid} must be strictly below ask {ask}")]
    CrossedQuotes { bid: f64, ask: f64 },
    #[error("trade price {price} matches neither bid {bid} nor ask {ask}")]
    OffQuote { price: f64, bid: f64, ask: f64 },
    #[error("half-spread unavailable: no non-zero return observed yet")]
    SpreadUnset,
    #[error("missing observation context: {0}")]
    MissingContext(&'static str),
    #[error("invalid interval [{lower}, {upper})")]
    InvalidInterval { lower: f64, upper: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("dimension {0} is not supported (1..=4)")]
    UnsupportedDimension(usize),
    #[error("duration must be positive, got {0}")]
    NonPositiveDuration(f64),
    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("NaN encountered in {0}")]
    NaN(&'static str),
    #[error("truncation region carries zero probability mass")]
    ZeroMass,
    #[error("box is unbounded and cannot be used for uniform initialization")]
    UnboundedBox,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("particle history too short: need {need}, have {have}")]
    InsufficientHistory { need: usize, have: usize },
    #[error("not enough data: {0}")]
    InsufficientData(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
