use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid distribution: {0}")]
    Distribution(String),

    #[error("backward called before a recorded forward pass")]
    NoForwardTrace,

    #[error("recurrent state belongs to clip {state_clip:?}, but input is from clip {input_clip:?}")]
    StaleState {
        state_clip: Option<String>,
        input_clip: String,
    },

    #[error("missing manifest in {0}")]
    MissingManifest(PathBuf),

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("corrupt index: {0}")]
    CorruptIndex(String),

    #[error("corrupt frame: clip {clip}, frame {frame}")]
    CorruptFrame { clip: String, frame: usize },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("dataset has no gaze ground truth")]
    MissingGaze,

    #[error("attention checkpoint required for fovea policy {0}")]
    MissingAttention(String),

    #[error("clip {clip} has {frames} frames, needs more than the horizon of {horizon}")]
    ClipTooShort {
        clip: String,
        frames: usize,
        horizon: usize,
    },

    #[error("no target frames to evaluate")]
    EmptyTargets,

    #[error("no feasible resolution: {0}")]
    Infeasible(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(
        context: impl Into<String>,
        expected: impl std::fmt::Debug,
        actual: impl std::fmt::Debug,
    ) -> Self {
        Error::Shape {
            context: context.into(),
            expected: format!("{expected:?}"),
            actual: format!("{actual:?}"),
        }
    }
}
