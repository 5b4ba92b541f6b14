use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("trajectory leaves the lumen at frame {frame} (clearance {clearance:.6} m)")]
    TrajectoryExitsLumen { frame: usize, clearance: f64 },

    #[error("depth for frame {frame_index}: {reason}")]
    Depth { frame_index: usize, reason: String },

    #[error("noise calibration failed: {0}")]
    Calibration(String),

    #[error("no valid pixels shared by prediction and ground truth")]
    EmptyOverlap,

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("split has no validation frames")]
    EmptySplit,

    #[error("tracking lost at frame {frame} after {failures} consecutive failures; last good frame {last_good:?}")]
    TrackingLost {
        frame: usize,
        failures: usize,
        last_good: Option<usize>,
    },

    #[error("no stable surfels to evaluate")]
    EmptyMap,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
