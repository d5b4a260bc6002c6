use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dataset files for `{split}` not found under {dir}: {instructions}")]
    MissingData {
        split: String,
        dir: PathBuf,
        instructions: String,
    },

    #[error("unknown split `{0}`")]
    UnknownSplit(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("corrupt image {path}: {reason}")]
    CorruptImage { path: PathBuf, reason: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("checkpoint checksum mismatch (file truncated or corrupted)")]
    Checksum,

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("variant mismatch: checkpoint holds `{found}`, expected `{expected}`")]
    VariantMismatch { found: String, expected: String },

    #[error("unsupported architecture: {0}")]
    UnsupportedArch(String),

    #[error("degenerate latent code: {0}")]
    DegenerateLatent(String),

    #[error("training diverged at step {step}: {reason}")]
    Diverged { step: usize, reason: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("feature extractor unavailable: {0}")]
    ExtractorUnavailable(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Torch(#[from] tch::TchError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}
