//! Deterministic stand-ins for the neural tools.
//!
//! A [`ToolFixture`] maps `(tool, label)` to a scripted output. Mocks read
//! those outputs verbatim, so identical calls always produce identical
//! results. Frame selection and zoom need no script beyond a query
//! embedding: they run the real selection and cropping code.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    AnnotatedPayload, Annotation, BBox, CroppedPayload, DepthMap, Payload, Provenance,
    RegionPayload, SegmentPayload, ToolBackend, ToolCall, ToolContext, ToolName, ToolRegistry,
    ToolResult, ToolSpec,
};
use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::ingestion::{estimate_visual_tokens, FrameRef, DEFAULT_PATCH};
use crate::selection::{select_frames, uniform_sample, SelectionConfig};
use crate::tooling::visual::{trim_segment, zoom_plan};

/// Scripted tool outputs, keyed by tool then label.
///
/// Labels are the object for tracking, the query for frame selection and
/// temporal grounding, the region label for image grounding, and the frame
/// index (as a string) for depth estimation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ToolFixture {
    pub entries: BTreeMap<ToolName, BTreeMap<String, Value>>,
}

#[derive(Deserialize)]
struct RegionScript {
    bbox: BBox,
}

impl ToolFixture {
    pub fn insert(&mut self, tool: ToolName, label: impl Into<String>, output: Value) -> &mut Self {
        self.entries.entry(tool).or_default().insert(label.into(), output);
        self
    }

    fn lookup(&self, tool: ToolName, label: &str) -> Result<&Value> {
        self.entries
            .get(&tool)
            .and_then(|m| m.get(label))
            .ok_or_else(|| Error::UnknownLabel {
                tool,
                label: label.to_string(),
            })
    }

    fn decode<T: serde::de::DeserializeOwned>(&self, tool: ToolName, label: &str) -> Result<T> {
        serde_json::from_value(self.lookup(tool, label)?.clone())
            .map_err(|e| Error::Parse(format!("fixture entry {tool}/{label}: {e}")))
    }

    pub fn query_embedding(&self, query: &str) -> Result<Embedding> {
        let raw: Vec<f64> = self.decode(ToolName::FrameSelection, query)?;
        Embedding::normalize(&raw)
    }
}

/// Tracks for `label`, verbatim from the fixture.
pub fn mock_tracker(fixture: &ToolFixture, label: &str) -> Result<Vec<Annotation>> {
    fixture.decode(ToolName::ObjectTracking, label)
}

pub fn mock_grounder(fixture: &ToolFixture, frame: usize, label: &str) -> Result<RegionPayload> {
    let script: RegionScript = fixture.decode(ToolName::ImageGrounding, label)?;
    Ok(RegionPayload {
        frame,
        label: label.to_string(),
        bbox: script.bbox,
    })
}

/// `(t0, t1)` in seconds for the query.
pub fn mock_temporal(fixture: &ToolFixture, query: &str) -> Result<(f64, f64)> {
    let [t0, t1]: [f64; 2] = fixture.decode(ToolName::TemporalGrounding, query)?;
    Ok((t0, t1))
}

pub fn mock_depth(fixture: &ToolFixture, frame: usize) -> Result<DepthMap> {
    #[derive(Deserialize)]
    struct Script {
        width: u32,
        height: u32,
        values: Vec<f64>,
    }
    let s: Script = fixture.decode(ToolName::DepthEstimation, &frame.to_string())?;
    let map = DepthMap {
        frame,
        width: s.width,
        height: s.height,
        values: s.values,
    };
    map.validate()?;
    Ok(map)
}

/// Serves every tool from one fixture.
#[derive(Debug, Clone)]
pub struct MockBackend {
    fixture: Arc<ToolFixture>,
}

impl MockBackend {
    pub fn new(fixture: Arc<ToolFixture>) -> Self {
        Self { fixture }
    }
}

fn frame_tokens(ctx: &ToolContext<'_>, index: usize) -> Result<u64> {
    Ok(ctx.manifest.frame_refs(&[index])?[0].visual_tokens())
}

fn refs_cost(refs: &[FrameRef]) -> u64 {
    refs.iter().map(FrameRef::visual_tokens).sum()
}

/// Runs the query-aware selector over every manifest frame that has an
/// embedding row. Shared by the mock and any live frame-selection backend.
pub fn select_from_manifest(
    query: &Embedding,
    ctx: &ToolContext<'_>,
    cfg: &SelectionConfig,
) -> Result<Vec<FrameRef>> {
    let embeddings = ctx
        .frame_embeddings
        .ok_or(Error::EmptyInput("frame selection needs frame embeddings"))?;
    let mut candidates = Vec::new();
    let mut vectors = Vec::new();
    for f in &ctx.manifest.frames {
        let Some(row) = f.embedding_row else { continue };
        let v = embeddings
            .get(row)
            .ok_or_else(|| Error::OutOfBounds(format!("embedding row {row} of frame {}", f.index)))?;
        candidates.push(f.index);
        vectors.push(v.clone());
    }
    if vectors.is_empty() {
        return Err(Error::EmptyInput("no frame has an embedding row"));
    }
    let picked = select_frames(query, &vectors, cfg)?;
    let indices: Vec<usize> = picked.presented_indices.iter().map(|&i| candidates[i]).collect();
    ctx.manifest.frame_refs(&indices)
}

impl ToolBackend for MockBackend {
    fn invoke(&self, call: &ToolCall, ctx: &ToolContext<'_>) -> Result<ToolResult> {
        let fx = &*self.fixture;
        let payload = match call.tool {
            ToolName::FrameSelection => {
                let query = call.require_text("query")?;
                let mut cfg = ctx.selection;
                if let Some(k) = call.int_arg("k") {
                    cfg.k = k as usize;
                }
                let frames = select_from_manifest(&fx.query_embedding(query)?, ctx, &cfg)?;
                return Ok(ToolResult::frames(frames, Provenance::Mock));
            }
            ToolName::ObjectTracking => {
                let object = call.require_text("object")?;
                let visible: Vec<usize> = ctx.frames.iter().map(|f| f.index).collect();
                let annotations = mock_tracker(fx, object)?
                    .into_iter()
                    .filter(|a| visible.contains(&a.frame))
                    .collect();
                Payload::Annotated(AnnotatedPayload {
                    frames: ctx.frames.to_vec(),
                    annotations,
                })
            }
            ToolName::TemporalGrounding => {
                let (t0, t1) = mock_temporal(fx, call.require_text("query")?)?;
                let segment = trim_segment(ctx.manifest, t0, t1)?;
                let keep: Vec<usize> = uniform_sample(segment.frames.len(), ctx.selection.k)
                    .into_iter()
                    .map(|i| segment.frames[i].index)
                    .collect();
                Payload::Segment(SegmentPayload {
                    t0,
                    t1,
                    frames: segment.frame_refs(&keep)?,
                })
            }
            ToolName::ImageGrounding => {
                let frame = call.require_int("frame")? as usize;
                let region = mock_grounder(fx, frame, call.require_text("label")?)?;
                let meta = ctx
                    .manifest
                    .frame(frame)
                    .ok_or_else(|| Error::OutOfBounds(format!("no frame {frame}")))?;
                if !region.bbox.fits(meta.width, meta.height) {
                    return Err(Error::OutOfBounds(format!("region outside frame {frame}")));
                }
                Payload::Region(region)
            }
            ToolName::DepthEstimation => {
                let frame = call.require_int("frame")? as usize;
                Payload::DepthMap(mock_depth(fx, frame)?)
            }
            ToolName::Zoom => return zoom_result(call, ctx, Provenance::Mock),
        };
        let cost = match &payload {
            Payload::Annotated(p) => refs_cost(&p.frames),
            Payload::Segment(p) => refs_cost(&p.frames),
            Payload::Region(p) => frame_tokens(ctx, p.frame)?,
            Payload::DepthMap(p) => frame_tokens(ctx, p.frame)?,
            _ => 0,
        };
        Ok(ToolResult::new(payload, cost, Provenance::Mock))
    }
}

/// Zoom needs no model: crop geometry plus the pixel budget.
pub fn zoom_result(call: &ToolCall, ctx: &ToolContext<'_>, provenance: Provenance) -> Result<ToolResult> {
    let frame = call.require_int("frame")? as usize;
    let bbox = call
        .arguments
        .get("bbox")
        .and_then(BBox::from_value)
        .ok_or_else(|| call.missing("bbox"))?;
    let meta = ctx
        .manifest
        .frame(frame)
        .ok_or_else(|| Error::OutOfBounds(format!("no frame {frame}")))?;
    let (width, height) = zoom_plan(meta.width, meta.height, bbox)?;
    Ok(ToolResult::new(
        Payload::Cropped(CroppedPayload {
            frame,
            bbox,
            width,
            height,
        }),
        estimate_visual_tokens(width, height, DEFAULT_PATCH),
        provenance,
    ))
}

/// Local zoom backend for registries without a mock fixture.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZoomBackend;

impl ToolBackend for ZoomBackend {
    fn invoke(&self, call: &ToolCall, ctx: &ToolContext<'_>) -> Result<ToolResult> {
        zoom_result(call, ctx, Provenance::Local)
    }
}

/// A registry with all six tools served by `fixture`.
pub fn mock_registry(fixture: ToolFixture) -> ToolRegistry {
    mock_registry_for(fixture, &ToolName::ALL)
}

pub fn mock_registry_for(fixture: ToolFixture, tools: &[ToolName]) -> ToolRegistry {
    let backend: Arc<dyn ToolBackend> = Arc::new(MockBackend::new(Arc::new(fixture)));
    let mut reg = ToolRegistry::new();
    for &t in tools {
        reg.register_shared(ToolSpec::builtin(t), backend.clone())
            .expect("tool names are distinct");
    }
    reg
}
