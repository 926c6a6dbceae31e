use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("X has numerical rank {rank} < p = {p}; the posterior is improper")]
    RankDeficientX { rank: usize, p: usize },

    #[error("Q is numerically singular: {0}")]
    SingularQ(String),

    #[error("invalid inverted-gamma parameters (shape = {shape}, scale = {scale})")]
    InvalidShape { shape: f64, scale: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("drift certificate unavailable: {0}")]
    CertificateUnavailable(String),

    #[error("model validation failed: {0}")]
    ValidationFailed(String),

    #[error("too few samples: {0}")]
    TooFewSamples(String),

    #[error("quadrature grid too coarse: boundary mass fraction {fraction:.3e} in dimension {dim}")]
    GridTooCoarse { dim: usize, fraction: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
