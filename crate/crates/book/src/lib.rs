//! Runs the guide's snippets as doctests.

#[doc = include_str!("../../../book/src/frame-selection.md")]
pub mod frame_selection {}

#[doc = include_str!("../../../book/src/preprocessing.md")]
pub mod preprocessing {}

#[doc = include_str!("../../../book/src/tools.md")]
pub mod tools {}

#[doc = include_str!("../../../book/src/episodes.md")]
pub mod episodes {}

#[doc = include_str!("../../../book/src/curation.md")]
pub mod curation {}

#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
