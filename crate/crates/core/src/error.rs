use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid quantization domain: {0}")]
    InvalidDomain(String),

    #[error("point {index} lies outside the patch domain")]
    DomainViolation { index: usize },

    #[error("level {level} out of range (max {max})")]
    LevelOutOfRange { level: u32, max: u32 },

    #[error("code {code} does not fit in {bits} bits")]
    CodeOutOfRange { code: u64, bits: u32 },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("prefix of {requested} points requested from a patch of {available}")]
    PrefixTooLong { requested: usize, available: usize },

    #[error("patch {0} is not MidOc-ordered")]
    Unordered(u64),

    #[error("unknown patch id {0}")]
    UnknownPatch(u64),

    #[error("invalid filter: {0}")]
    InvalidFilter(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("undefined dimension: all points are identical")]
    UndefinedDimension,

    #[error("not enough values to fuse (need {needed}, got {got})")]
    NotEnoughValues { needed: usize, got: usize },

    #[error("class {class} has {support} observations, fewer than {needed}")]
    ClassTooSmall { class: String, support: usize, needed: usize },

    #[error("dataset has a single class")]
    SingleClass,

    #[error("unsupported store version {found} (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },

    #[error("store file is corrupt: {0}")]
    Corrupt(String),

    #[error("checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Checksum { stored: u32, computed: u32 },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
