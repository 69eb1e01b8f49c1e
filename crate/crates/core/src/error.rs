use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed attribute vector: expected length {expected}, got {got}")]
    MalformedIndex { expected: usize, got: usize },
    #[error("attribute vector contains non-finite entries")]
    NonFiniteIndex,
    #[error("attribute vector is not unit norm (norm {norm})")]
    NotUnitIndex { norm: f64 },
    #[error("degenerate attribute index for label {label}: pre-normalization norm {norm:e}")]
    DegenerateIndex { label: usize, norm: f64 },
    #[error("label {label} out of range for a catalog of {len} attributes")]
    LabelOutOfRange { label: usize, len: usize },
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("dense tabulation of {cells} cells exceeds the limit of {limit}")]
    DenseTooLarge { cells: usize, limit: usize },
    #[error("degenerate skinning transform (determinant {det:e})")]
    DegenerateSkinning { det: f64 },
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid shape: {0}")]
    Shape(String),
    #[error("non-finite gradient in segment `{segment}`")]
    NonFiniteGradient { segment: String },
    #[error("divergence at step {step}: {detail}")]
    Divergence { step: usize, detail: String },
    #[error("bad magic: not a scene container")]
    BadMagic,
    #[error("unsupported container version {0}")]
    BadVersion(u32),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("malformed container: {0}")]
    Malformed(String),
    #[error("catalogs differ between scenes")]
    CatalogMismatch,
    #[error("invalid config: {0}")]
    Config(String),
    #[error("png encoding failed: {0}")]
    Png(#[from] png::EncodingError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
