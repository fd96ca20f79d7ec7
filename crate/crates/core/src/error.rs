use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid framing: frame length {frame_length} must exceed overlap {overlap}")]
    InvalidFraming { frame_length: usize, overlap: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("tape error: {0}")]
    Tape(String),

    #[error("reference signal has zero energy")]
    UndefinedReference,

    #[error("degenerate codebook: {0}")]
    DegenerateCodebook(String),

    #[error("corrupt code: index {index} out of range for {symbols} symbols")]
    CorruptCode { index: usize, symbols: usize },

    #[error("no observations to estimate from")]
    NoObservations,

    #[error("config error: {0}")]
    Config(String),

    #[error("truncated payload at byte offset {offset}")]
    Truncated { offset: usize },

    #[error("malformed coded file: {0}")]
    Bitstream(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint mismatch: file was encoded with {expected}, got {actual}")]
    CheckpointMismatch { expected: String, actual: String },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error("unsupported audio: {0}")]
    UnsupportedAudio(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
}
