use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(&'static str),

    #[error("box lies entirely outside the image")]
    EmptyAfterClamp,

    #[error("invalid rotation: {0}")]
    InvalidRotation(String),

    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),

    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),

    #[error("invalid depth {0}")]
    InvalidDepth(f64),

    #[error("no valid depth pixels inside region")]
    NoValidDepth,

    #[error("invalid depth map: {0}")]
    InvalidDepthMap(String),

    #[error("parse error at byte {offset}: {reason}")]
    Parse { offset: usize, reason: String },

    #[error("cannot serialize token: {0}")]
    Serialize(String),

    #[error("invalid mentions: {0}")]
    InvalidMentions(String),

    #[error("protocol violation: {0}")]
    ProtocolViolation(String),

    #[error("nothing to generate: {0}")]
    NothingToGenerate(String),

    #[error("scene {image_id}: {source}")]
    Scene { image_id: String, source: Box<Error> },

    #[error("empty evaluation input")]
    EmptyEvaluation,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}: {message}")]
    Io { path: String, message: String },

    #[error("{path}:{line}: byte {offset}: {message}")]
    Record {
        path: String,
        line: usize,
        offset: usize,
        message: String,
    },
}

impl Error {
    pub(crate) fn parse(offset: usize, reason: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, err: impl std::fmt::Display) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            message: err.to_string(),
        }
    }

    /// Byte range of the offending input, when the error carries one.
    pub fn byte_offset(&self) -> Option<usize> {
        match self {
            Error::Parse { offset, .. } | Error::Record { offset, .. } => Some(*offset),
            _ => None,
        }
    }
}

pub(crate) fn check_finite(what: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidBox(format!("{what} has non-finite coordinates")))
    }
}
