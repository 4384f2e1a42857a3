use thiserror::Error;

/// Errors produced by the shape kernel.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("rank-deficient design matrix (rank {rank} of {cols}, condition {condition:.3e})")]
    RankDeficient { rank: usize, cols: usize, condition: f64 },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("gradient norm below threshold ({0:.3e}) at query point")]
    FlatGradient(f64),

    #[error("mesh is not watertight: {boundary_edges} boundary or non-manifold edges")]
    NotWatertight { boundary_edges: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("numerical failure at step {step} in {component}: {detail}")]
    Numerical {
        step: usize,
        component: String,
        detail: String,
    },

    #[error("data integrity: {0}")]
    Integrity(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit status for this error: 1 validation, 2 data integrity,
    /// 3 numerical failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::InvalidArgument(_) => 1,
            Error::ShapeMismatch { .. }
            | Error::NotWatertight { .. }
            | Error::Parse { .. }
            | Error::Integrity(_)
            | Error::Io(_)
            | Error::Json(_)
            | Error::Csv(_) => 2,
            Error::RankDeficient { .. } | Error::NonFinite(_) | Error::FlatGradient(_) | Error::Numerical { .. } => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
