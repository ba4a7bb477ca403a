use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate utterance id {0:?}")]
    DuplicateId(String),
    #[error("label {label:?} is not in taxonomy {taxonomy:?}")]
    UnknownLabel { label: String, taxonomy: String },
    #[error("invalid taxonomy: {0}")]
    InvalidTaxonomy(String),
    #[error("invalid prompt template {id:?}: {reason}")]
    InvalidTemplate { id: String, reason: String },
    #[error("score map does not match taxonomy: {0}")]
    ScoreMismatch(String),
    #[error("weak-label record for {utterance_id:?} claims {claimed:?} but argmax is {argmax:?}")]
    ArgmaxViolation {
        utterance_id: String,
        claimed: String,
        argmax: String,
    },
    #[error("invalid split request: {0}")]
    Split(String),
    #[error("fraction {0} is not one of 0.10, 0.30, 0.50, 0.70, 1.00")]
    InvalidFraction(f64),
    #[error("scorer error: {0}")]
    Scorer(String),
    #[error("remote scorer failed for sub-batches {failed_batches:?}: {message}")]
    Remote {
        failed_batches: Vec<usize>,
        message: String,
    },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("waveform too short: {samples} samples < frame length {frame_length}")]
    TooShort { samples: usize, frame_length: usize },
    #[error("invalid dsp config: {0}")]
    DspConfig(String),
    #[error("audio error: {0}")]
    Audio(String),
    #[error("invalid model config: {0}")]
    ModelConfig(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("label index {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("non-finite gradient in tensor {0:?}")]
    NonFiniteGradient(String),
    #[error("schedule step {step} outside [0, {total_steps}]")]
    StepOutOfRange { step: usize, total_steps: usize },
    #[error("training error: {0}")]
    Training(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("length mismatch: {left} predictions vs {right} references")]
    LengthMismatch { left: usize, right: usize },
    #[error("evaluation error: {0}")]
    Evaluation(String),
    #[error("transcript has no in-vocabulary words")]
    Abstain,
    #[error("taxonomy mismatch: {0}")]
    TaxonomyMismatch(String),
    #[error("invalid synthetic corpus spec: {0}")]
    SynthSpec(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
