use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the workbench.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown task preset `{0}`")]
    UnknownTask(String),

    #[error("covariance of cluster {cluster} is not positive definite")]
    NotPositiveDefinite { cluster: usize },

    #[error("invalid task definition: {0}")]
    InvalidTask(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate fit: training set contains only class {class}")]
    SingleClass { class: u8 },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("dimension mismatch: expected {expected} columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("could not draw an initial split containing both classes after {attempts} attempts")]
    SplitFailed { attempts: usize },

    #[error("series has zero variance")]
    ZeroVariance,

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("design matrix is rank deficient (rank {rank} < {cols} columns)")]
    RankDeficient { rank: usize, cols: usize },

    #[error("fit diverged: {0}")]
    Divergence(String),

    #[error("trajectory aborted at step {step}: {source}")]
    TrajectoryAborted {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("missing input file {0}")]
    MissingInput(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
