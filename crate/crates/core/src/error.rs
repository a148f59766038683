use thiserror::Error;

#[derive(Debug, Error)]
pub enum FerlError {
    #[error("joint {joint} angle {value} outside limits [{lower}, {upper}]")]
    JointLimit {
        joint: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },
    #[error("unknown feature id `{0}`")]
    UnknownFeature(String),
    #[error("length mismatch: expected {expected}, got {got}")]
    Mismatch { expected: usize, got: usize },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("parse error (line {line}): {reason}")]
    Parse { line: usize, reason: String },
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<FerlError>,
    },
}

impl FerlError {
    pub fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        FerlError::Invalid {
            what,
            reason: reason.into(),
        }
    }

    pub fn parse(line: usize, reason: impl Into<String>) -> Self {
        FerlError::Parse {
            line,
            reason: reason.into(),
        }
    }

    /// Wraps the error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        FerlError::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = FerlError> = std::result::Result<T, E>;

/// Extension for tagging results with a stage name.
pub trait StageExt<T> {
    fn stage(self, stage: &str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
