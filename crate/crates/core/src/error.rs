use std::path::PathBuf;

/// Errors produced anywhere in the feature, PCA, pooling, network and
/// experiment pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("failed to decode audio: {0}")]
    Decode(String),

    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),

    #[error("unsupported sample rate {found} Hz (expected {expected} Hz)")]
    SampleRate { found: u32, expected: u32 },

    #[error("insufficient audio: {samples} samples, need at least {required}")]
    InsufficientAudio { samples: usize, required: usize },

    #[error("insufficient samples: got {got}, need at least {required}")]
    InsufficientSamples { got: usize, required: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("window size {window} exceeds time length {time}")]
    WindowTooLarge { window: usize, time: usize },

    #[error("top-k {k} exceeds time length {time}")]
    TopKTooLarge { k: usize, time: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("degenerate variance: all eigenvalues are zero")]
    DegenerateVariance,

    #[error("batch normalization needs at least 2 samples in train mode, got {0}")]
    DegenerateBatch(usize),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input data or schemas (as opposed to
    /// runtime failures such as divergence).
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Decode(_)
                | Error::UnsupportedFormat(_)
                | Error::SampleRate { .. }
                | Error::InsufficientAudio { .. }
                | Error::InsufficientSamples { .. }
                | Error::Schema(_)
                | Error::Validation(_)
                | Error::Serialization(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
