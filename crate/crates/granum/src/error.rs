//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated an operation's preconditions (bad dims, bad config,
    /// out-of-range step index, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Grid value kind does not match what the operation requires.
    #[error("unsupported value kind: expected {expected}, got {found}")]
    UnsupportedValueKind {
        expected: &'static str,
        found: &'static str,
    },

    /// An archive already contains an entry with this id.
    #[error("duplicate id: {0}")]
    DuplicateId(String),

    /// Stored payload does not decode to the advertised length.
    #[error("corrupt payload: {0}")]
    CorruptPayload(String),

    /// Unknown magic, version or container layout.
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    /// Text parse failure with a 1-based line number.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Mesh slicing produced a contour that cannot be closed.
    #[error("open contour at z={z} (grain {grain})")]
    OpenContour { z: f64, grain: u32 },

    /// Signed distance is undefined for a grid with no 0/1 interface.
    #[error("no surface: grid is uniform, signed distance undefined")]
    NoSurface,

    /// Training aborted on a non-finite loss.
    #[error("non-finite loss at step {step} (lr={lr:.3e}, grad_norm={grad_norm:.3e})")]
    NonFiniteLoss { step: usize, lr: f64, grad_norm: f64 },

    /// A watershed marker points at a background voxel.
    #[error("marker {index} lies on background")]
    MarkerOnBackground { index: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("empty grain set")]
    EmptyGrainSet,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
