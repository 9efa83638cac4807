//! Query-aware frame selection and tool-driven multi-turn video reasoning.
//!
//! The core is a greedy MAP solver for a determinantal point process over
//! frame embeddings ([`selection`]). Around it sit frame preprocessing
//! ([`ingestion`]), a tool registry with deterministic mocks ([`tooling`]),
//! the episode loop ([`orchestrator`]), two-stage trajectory curation
//! ([`curation`]) and answer scoring ([`metrics`]).

pub mod curation;
pub mod embedding;
pub mod error;
pub mod format;
pub mod http;
pub mod ingestion;
pub mod linalg;
pub mod metrics;
pub mod orchestrator;
pub mod scenario;
pub mod selection;
pub mod tooling;

pub use embedding::{Embedding, SimilarityKernel};
pub use error::{Error, Result};
pub use ingestion::{FrameMeta, FrameRef, VideoManifest};
pub use orchestrator::{run_episode, Episode, EpisodeConfig, Trace};
pub use selection::{greedy_dpp_map, select_frames, SelectionConfig, SelectionResult};
pub use tooling::{ToolCall, ToolName, ToolRegistry, ToolResult};
