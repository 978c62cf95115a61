use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("point maps to infinity under the homography")]
    PointAtInfinity,

    #[error("need at least {needed} correspondences, got {got}")]
    TooFewMatches { needed: usize, got: usize },

    #[error("no hypothesis reached {min_inliers} inliers")]
    NoConsensus { min_inliers: usize },

    #[error("need at least {needed} samples for PCA, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("evaluation skipped: validity mask is empty")]
    EvaluationSkipped,
}

impl Error {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
