use thiserror::Error;

/// Errors raised by the mechanism library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("input outside the model domain: {0}")]
    InvalidDomain(String),

    #[error("degenerate split: support points coincide at {mu} but target mean is {target}")]
    DegenerateSplit { mu: f64, target: f64 },

    #[error("prior atom at {tau} has zero mass")]
    ZeroMassAtom { tau: f64 },

    #[error("support violates Bayes plausibility: mean {got} vs prior mean {expected}")]
    PlausibilityViolation { got: f64, expected: f64 },

    #[error("invalid signal scheme: {0}")]
    InvalidScheme(String),

    #[error("no reward and signal satisfy the threshold constraint (beta = {beta})")]
    Infeasible { beta: f64 },

    #[error("theta {theta} is not on the threshold grid")]
    UnknownBucket { theta: f64 },

    #[error("reward {gamma} cannot be bracketed: {reason}")]
    Unbracketable { gamma: f64, reason: String },

    #[error("no grid reward induces threshold {theta} at tau {tau}")]
    GridExhausted { theta: f64, tau: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
