use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("volume dims {dims:?} are not a multiple of block size {k}")]
    DimsNotMultiple { dims: [usize; 3], k: usize },

    #[error("invalid volume: {0}")]
    InvalidVolume(String),

    #[error("block indices must be strictly ascending (position {position})")]
    NotAscending { position: usize },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("invalid architecture: {0}")]
    Architecture(String),

    #[error("training diverged at step {step}")]
    Diverged { step: usize },

    #[error("empty training set")]
    EmptyDataset,

    #[error("range coder: {0}")]
    Coder(String),

    #[error("stream checksum mismatch")]
    StreamChecksum,

    #[error("truncated stream")]
    Truncated,

    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },

    #[error("unsupported format version {0}")]
    Version(u8),

    #[error("model hash mismatch: container {container:016x}, model {model:016x}")]
    ModelMismatch { container: u64, model: u64 },

    #[error("container checksum mismatch")]
    ContainerChecksum,

    #[error("malformed data: {0}")]
    Malformed(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
