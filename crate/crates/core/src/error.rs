use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite input {value} at index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("invalid format: {0}")]
    InvalidFormat(String),

    #[error("overflow mode {mode} cannot be used with a {} format", if *signed { "signed" } else { "unsigned" })]
    SignednessMismatch {
        mode: crate::OverflowMode,
        signed: bool,
    },

    #[error("value {value} is not representable in {format}")]
    NotRepresentable { value: f64, format: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("NaN encountered: {0}")]
    NaN(String),

    #[error("division by quantized zero at index {0}")]
    DivisionByZero(usize),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("corpus error at line {line}: {msg}")]
    Corpus { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
