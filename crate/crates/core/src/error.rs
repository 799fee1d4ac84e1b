use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch ({detail})")]
    Shape { op: &'static str, detail: String },

    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("degenerate geometry: incident and outgoing directions are antiparallel")]
    DegenerateGeometry,

    #[error("direction falls below the horizon")]
    OutOfHemisphere,

    #[error("format error: {0}")]
    Format(String),

    #[error("truncated data: expected {expected} bytes, found {found}")]
    Length { expected: usize, found: usize },

    #[error("bad magic {found:?}, expected {expected:?}")]
    Magic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported version {0}")]
    Version(u32),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("wavelength {lambda} nm outside axis [{min}, {max}] nm")]
    WavelengthOutOfRange { lambda: f64, min: f64, max: f64 },

    #[error("training diverged: {term} is {value}")]
    Diverged { term: &'static str, value: f64 },

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("image encoding failed: {0}")]
    Image(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }
}
