use std::io;

use crate::tooling::ToolName;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot normalize a zero vector (norm {norm:e})")]
    ZeroVector { norm: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("enumeration too large: C({n}, {k}) exceeds {limit}")]
    TooLarge { n: usize, k: usize, limit: u64 },

    #[error("manifest has no frames")]
    EmptyManifest,

    #[error("invalid manifest: {0}")]
    InvalidManifest(String),

    #[error("no frame inside segment [{t0}, {t1}]")]
    EmptySegment { t0: f64, t1: f64 },

    #[error("invalid segment [{t0}, {t1}] for duration {duration}")]
    InvalidSegment { t0: f64, t1: f64, duration: f64 },

    #[error("out of bounds: {0}")]
    OutOfBounds(String),

    #[error("tool `{0}` is already registered")]
    DuplicateTool(ToolName),

    #[error("tool `{0}` is not registered")]
    UnknownTool(String),

    #[error("invalid arguments for `{tool}`: {reason}")]
    InvalidArguments { tool: ToolName, reason: String },

    #[error("fixture has no entry for label `{label}` of tool `{tool}`")]
    UnknownLabel { tool: ToolName, label: String },

    #[error("malformed tool call: {0}")]
    MalformedCall(String),

    #[error("context budget {budget} below irreducible floor {floor}")]
    BudgetTooSmall { budget: u64, floor: u64 },

    #[error("model client: {0}")]
    Model(String),

    #[error("remote service: {0}")]
    Remote(String),

    #[error("ground truth is zero")]
    ZeroGroundTruth,

    #[error("id mismatch: {0}")]
    IdMismatch(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] io::Error),
}
