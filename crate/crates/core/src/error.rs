use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no BCH code of length {c} has message length >= {k_min}")]
    NoValidCode { c: usize, k_min: usize },

    #[error("unsupported field degree {0} (expected 3..=10)")]
    UnsupportedField(usize),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("message length {k} is too large to enumerate (limit {limit})")]
    TooLarge { k: usize, limit: usize },

    #[error("{users} users do not fit in a {bits}-bit prefix space")]
    PrefixSpaceExhausted { users: usize, bits: usize },

    #[error("code with k = {k} leaves no random bits after a {base_bits}-bit base vector")]
    CodeTooShort { k: usize, base_bits: usize },

    #[error("bad architecture: {0}")]
    BadArchitecture(String),

    #[error("projection has zero norm; scaling is undefined")]
    ZeroNormProjection,

    #[error("trace does not match parameters: {0}")]
    StaleTrace(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("negative loss needs at least one other codeword")]
    EmptyOtherSet,

    #[error("index {index} out of range for {len} classes")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("spreadout regularizer needs at least two embeddings, got {0}")]
    TooFewUsers(usize),

    #[error("invalid client sample size {kappa} for {users} users")]
    BadKappa { kappa: usize, users: usize },

    #[error("client {0} has an empty dataset")]
    EmptyDataset(usize),

    #[error("parameter shapes differ between updates")]
    ShapeMismatch,

    #[error("no updates to aggregate")]
    EmptyUpdateSet,

    #[error("training diverged at round {round}: {detail}")]
    DivergenceDetected { round: usize, detail: String },

    #[error("warm-up set is empty")]
    EmptyWarmupSet,

    #[error("evaluation split '{0}' has no trials")]
    EmptySplit(String),

    #[error("bad dataset spec: {0}")]
    BadSpec(String),

    #[error("corrupt file {path}: {detail}")]
    CorruptFile { path: PathBuf, detail: String },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("missing artifact {0}")]
    MissingArtifact(PathBuf),

    #[error("invalid config: {0}")]
    ConfigInvalid(String),

    #[error("output directory {0} is locked by another command")]
    Locked(PathBuf),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable variant name, used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NoValidCode { .. } => "NoValidCode",
            Error::UnsupportedField(_) => "UnsupportedField",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::TooLarge { .. } => "TooLarge",
            Error::PrefixSpaceExhausted { .. } => "PrefixSpaceExhausted",
            Error::CodeTooShort { .. } => "CodeTooShort",
            Error::BadArchitecture(_) => "BadArchitecture",
            Error::ZeroNormProjection => "ZeroNormProjection",
            Error::StaleTrace(_) => "StaleTrace",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::EmptyOtherSet => "EmptyOtherSet",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::TooFewUsers(_) => "TooFewUsers",
            Error::BadKappa { .. } => "BadKappa",
            Error::EmptyDataset(_) => "EmptyDataset",
            Error::ShapeMismatch => "ShapeMismatch",
            Error::EmptyUpdateSet => "EmptyUpdateSet",
            Error::DivergenceDetected { .. } => "DivergenceDetected",
            Error::EmptyWarmupSet => "EmptyWarmupSet",
            Error::EmptySplit(_) => "EmptySplit",
            Error::BadSpec(_) => "BadSpec",
            Error::CorruptFile { .. } => "CorruptFile",
            Error::VersionMismatch { .. } => "VersionMismatch",
            Error::MissingArtifact(_) => "MissingArtifact",
            Error::ConfigInvalid(_) => "ConfigInvalid",
            Error::Locked(_) => "Locked",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::Io(_) => "Io",
        }
    }
}
