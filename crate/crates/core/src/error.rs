use thiserror::Error;

/// Errors produced by every fallible operation in this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("trajectory must contain at least one frame")]
    EmptyTrajectory,

    #[error("layer range [{start}, {start}+{count}) out of bounds for {n_layers} layers")]
    LayerRangeOutOfBounds {
        start: usize,
        count: usize,
        n_layers: usize,
    },

    #[error("non-finite value in {0}")]
    NonFiniteInput(&'static str),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("insufficient samples: need at least {needed}, found {found}")]
    InsufficientSamples { needed: usize, found: usize },

    #[error("requested {k} components but at most {max} are available")]
    KTooLarge { k: usize, max: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("degenerate point configuration: cross-covariance rank too low")]
    DegenerateConfiguration,

    #[error("too few frames: need at least {needed} after subsampling, found {found}")]
    TooFewFrames { needed: usize, found: usize },

    #[error("index {index} out of range for {len} components")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("subspace dimensions total {requested} but ambient dimension is {ambient}")]
    DimsExceedAmbient { requested: usize, ambient: usize },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),

    #[error("unsupported spatial dimensionality {0} (expected 2 or 3)")]
    UnsupportedDimensionality(u32),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: u64, found: u64 },

    #[error("non-finite value in file payload")]
    NonFinitePayload,

    #[error("declared size exceeds limit: {0}")]
    SizeLimitExceeded(String),

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("stored components are not orthonormal (max Gram deviation {max_deviation:e})")]
    OrthonormalityViolation { max_deviation: f64 },

    #[error("inconsistent point count: frame {frame} has {found} points, expected {expected}")]
    InconsistentPointCount {
        frame: usize,
        expected: usize,
        found: usize,
    },

    #[error("malformed CSV at line {line}: {message}")]
    MalformedCsv { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("metadata: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code class: 2 validation, 3 numerical, 4 I/O and file format.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NumericalFailure(_) | Error::DegenerateConfiguration => 3,
            Error::BadMagic { .. }
            | Error::UnsupportedVersion(_)
            | Error::UnsupportedDimensionality(_)
            | Error::TruncatedPayload { .. }
            | Error::NonFinitePayload
            | Error::SizeLimitExceeded(_)
            | Error::Malformed(_)
            | Error::OrthonormalityViolation { .. }
            | Error::InconsistentPointCount { .. }
            | Error::MalformedCsv { .. }
            | Error::Io(_)
            | Error::Json(_) => 4,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
