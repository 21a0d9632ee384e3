//! Crate-wide error type.

use thiserror::Error;

/// Broad failure class, used by the CLI to pick an exit code
/// (0 success, 1 validation failure, 2 runtime failure).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Runtime,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("input too short")]
    InputTooShort,
    #[error("input too short for receptive field")]
    InputTooShortForReceptiveField,
    #[error("too few frames to normalize")]
    TooFewFrames,
    #[error("downsampler expects base-rate Fbank")]
    NotBaseRateFbank,
    #[error("mask embedding dimension mismatch: embedding {embedding} vs features {features}")]
    MaskEmbeddingDim { embedding: usize, features: usize },
    #[error("mask plan length {plan} does not match sequence length {seq}")]
    MaskPlanLength { plan: usize, seq: usize },
    #[error("empty mask")]
    EmptyMask,
    #[error("not enough data for {clusters} clusters: {frames} frames")]
    NotEnoughData { clusters: usize, frames: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("phoneme id out of range: {id} (must be < {num_classes})")]
    PhonemeIdOutOfRange { id: i64, num_classes: usize },
    #[error("feature/label length mismatch of {diff} frames exceeds tolerance")]
    LengthMismatch { diff: usize },
    #[error("non-finite features")]
    NonFiniteFeatures,
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),
    #[error("no recorded forward pass")]
    NoForwardPass,
    #[error("CTC length guard violation: {frames} frames < {required} required")]
    CtcGuard { frames: usize, required: usize },
    #[error("empty reference")]
    EmptyReference,
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("profiler: {0}")]
    Profiler(String),
    #[error("empty profiling window")]
    EmptyWindow,
    #[error("zero baseline rate")]
    ZeroBaseline,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("bad file format: {0}")]
    Format(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Run(String),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Maps each variant onto the CLI exit-code contract.
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidConfig(_) | Error::Manifest(_) | Error::EmptyCorpus => {
                ErrorClass::Validation
            }
            _ => ErrorClass::Runtime,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
