use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("empty track")]
    EmptyTrack,

    #[error("non-monotone frame ids: {previous} followed by {next}")]
    NonMonotoneFrameIds { previous: u64, next: u64 },

    #[error("inconsistent joint count: expected {expected}, found {found}")]
    InconsistentJoints { expected: usize, found: usize },

    #[error("non-finite coordinate in frame {frame_id}")]
    NonFinite { frame_id: u64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("no frames")]
    NoFrames,

    #[error("mixed resolutions: {first_w}x{first_h} and {other_w}x{other_h}")]
    MixedResolutions {
        first_w: u32,
        first_h: u32,
        other_w: u32,
        other_h: u32,
    },

    #[error("unreadable image {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("not a flow file (magic {found})")]
    BadMagic { found: f32 },

    #[error("truncated flow payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("region out of bounds: {0}")]
    OutOfBounds(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("N exceeds patch count ({requested} > {available})")]
    TooManyPatches { requested: usize, available: usize },

    #[error("point behind camera (joint {joint}, depth {depth})")]
    BehindCamera { joint: usize, depth: f64 },

    #[error("focal length diverged to {focal} at iteration {iteration}")]
    Diverged { focal: f64, iteration: usize },

    #[error("empty alignment")]
    EmptyAlignment,

    #[error("no overlapping frames")]
    NoOverlap,

    #[error("flow/frame count mismatch: {frames} frames need {expected} flows, got {found}")]
    FlowCountMismatch {
        frames: usize,
        expected: usize,
        found: usize,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dims(expected: impl ToString, found: impl ToString) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
