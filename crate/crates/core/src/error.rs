use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("bvh parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid skeleton: {0}")]
    Skeleton(String),

    #[error("invalid motion: {0}")]
    Motion(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("inverse kinematics: {0}")]
    Kinematics(String),

    #[error("degenerate keyframe: end effector radius {radius} is too small to define an azimuth")]
    DegenerateKeyframe { radius: f64 },

    #[error("invalid embedding {motion_id}: {message}")]
    Embedding { motion_id: String, message: String },

    #[error("simulation diverged at frame {frame} (step {step})")]
    Divergence { frame: usize, step: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Attaches a file path to an error raised while processing that file.
    pub fn in_file(self, path: impl Into<PathBuf>) -> Self {
        Error::File {
            path: path.into(),
            source: Box::new(self),
        }
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
