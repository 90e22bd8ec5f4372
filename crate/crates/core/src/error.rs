use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("element outside the coordinate chart (rotation angle {angle:.6} >= cutoff {cutoff:.6})")]
    OutOfChart { angle: f64, cutoff: f64 },
    #[error("invalid triple: {0}")]
    InvalidTriple(String),
    #[error("path grid does not match the triple: {0}")]
    GridMismatch(String),
    #[error("test function rejected: {0}")]
    FRejected(String),
    #[error("homogeneous space is not irreducible")]
    NotIrreducible,
    #[error("triple is not K-invariant: {0}")]
    NotKInvariant(String),
    #[error("drift piece starting at t = {0} leaves the section chart")]
    DriftPieceTooLarge(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
