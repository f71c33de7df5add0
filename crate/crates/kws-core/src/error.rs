//! Error types shared across the toolkit.

pub type Result<T> = std::result::Result<T, KwsError>;

#[derive(Debug, thiserror::Error)]
pub enum KwsError {
    /// A WAV file violated an input precondition (wrong rate, channels, codec).
    #[error("unsupported {field}: {detail}")]
    UnsupportedWav { field: &'static str, detail: String },

    /// The WAV container itself could not be decoded.
    #[error("malformed wav: {0}")]
    WavDecode(String),

    /// Tensor or layer geometry mismatch. Carries both shapes.
    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    /// A layer geometry that cannot be executed (filter larger than input, ...).
    #[error("invalid geometry in {context}: {detail}")]
    InvalidGeometry { context: String, detail: String },

    /// Architecture config text could not be parsed.
    #[error("config parse error at line {line}: {detail}")]
    ConfigParse { line: usize, detail: String },

    /// Weight file format violation (magic, version, truncation).
    #[error("weight file format error: {0}")]
    WeightFormat(String),

    /// Unknown builtin architecture name.
    #[error("unknown architecture {name:?}; valid names: {valid}")]
    UnknownArch { name: String, valid: String },

    /// Bad or missing benchmark/regression input data.
    #[error("{0}")]
    InvalidData(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
}

impl KwsError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        KwsError::Io {
            context: context.into(),
            source,
        }
    }

    /// Stable one-word category used by the CLI error prefix.
    pub fn category(&self) -> &'static str {
        match self {
            KwsError::UnsupportedWav { .. } | KwsError::WavDecode(_) => "decode",
            KwsError::ShapeMismatch { .. } | KwsError::InvalidGeometry { .. } => "shape",
            KwsError::ConfigParse { .. } | KwsError::UnknownArch { .. } => "parse",
            KwsError::WeightFormat(_) => "format",
            KwsError::InvalidData(_) => "data",
            KwsError::Io { .. } => "io",
        }
    }
}
