use std::io;

/// Errors produced by the library.
#[derive(thiserror::Error, Debug)]
pub enum Error {
    #[error("io: {0}")]
    Io(#[from] io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid vocabulary: {0}")]
    Vocab(String),

    #[error("token id {id} out of range (total size {total})")]
    TokenOutOfRange { id: u32, total: u32 },

    #[error("sample {value} at step {step} outside [0, {limit})")]
    SampleOutOfRange { step: usize, value: u64, limit: u64 },

    #[error("malformed grid: {0}")]
    Grid(String),

    #[error("inconsistent padding at layer {layer}, step {step}")]
    InconsistentPadding { layer: usize, step: usize },

    #[error("layout: {0}")]
    Layout(String),

    #[error("model: {0}")]
    Model(String),

    #[error("sequence length {len} exceeds limit {max}")]
    Overlength { len: usize, max: usize },

    #[error("training: {0}")]
    Training(String),

    #[error("decode: {0}")]
    Decode(String),

    #[error("config: {0}")]
    Config(String),

    #[error("unknown file magic {:?} ({})", String::from_utf8_lossy(.0), .0.iter().map(|b| format!("{b:02x}")).collect::<Vec<_>>().join(" "))]
    UnknownMagic([u8; 4]),

    #[error("format: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
