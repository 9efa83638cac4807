//! Tool registry, call/result types and the visual post-processing applied to
//! tool outputs.
//!
//! Six tools are known. Each has a fixed argument schema and result kind;
//! a [`ToolRegistry`] binds a subset of them to backends, either the
//! fixture-driven mocks in [`mock`] or the HTTP client in [`remote`].

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::ingestion::{FrameRef, VideoManifest};
use crate::selection::SelectionConfig;

pub mod mock;
pub mod remote;
pub mod visual;

pub use visual::{overlay_markers, trim_segment, zoom_image, zoom_plan, Frame, MARKER_PALETTE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolName {
    FrameSelection,
    ObjectTracking,
    TemporalGrounding,
    ImageGrounding,
    DepthEstimation,
    Zoom,
}

impl ToolName {
    pub const ALL: [ToolName; 6] = [
        ToolName::FrameSelection,
        ToolName::ObjectTracking,
        ToolName::TemporalGrounding,
        ToolName::ImageGrounding,
        ToolName::DepthEstimation,
        ToolName::Zoom,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ToolName::FrameSelection => "frame_selection",
            ToolName::ObjectTracking => "object_tracking",
            ToolName::TemporalGrounding => "temporal_grounding",
            ToolName::ImageGrounding => "image_grounding",
            ToolName::DepthEstimation => "depth_estimation",
            ToolName::Zoom => "zoom",
        }
    }

    /// Short label used in usage tables.
    pub fn abbreviation(self) -> &'static str {
        match self {
            ToolName::FrameSelection => "FS",
            ToolName::ObjectTracking => "OT",
            ToolName::TemporalGrounding => "TG",
            ToolName::ImageGrounding => "IG",
            ToolName::DepthEstimation => "DE",
            ToolName::Zoom => "ZI",
        }
    }
}

impl fmt::Display for ToolName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ToolName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ToolName::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::UnknownTool(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResultKind {
    NewFrameSet,
    AnnotatedFrames,
    Segment,
    Region,
    DepthMap,
    CroppedImage,
    /// The call failed; the payload carries the message shown to the model.
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArgType {
    Text,
    /// Non-negative integer.
    Integer,
    /// `[x, y, w, h]` in pixels.
    BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArgSpec {
    pub name: String,
    pub ty: ArgType,
    pub required: bool,
    pub description: String,
}

impl ArgSpec {
    fn new(name: &str, ty: ArgType, required: bool, description: &str) -> Self {
        Self {
            name: name.into(),
            ty,
            required,
            description: description.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: ToolName,
    pub description: String,
    pub arguments: Vec<ArgSpec>,
    pub result: ResultKind,
}

impl ToolSpec {
    /// The standard schema for a tool.
    pub fn builtin(name: ToolName) -> Self {
        use ArgType::*;
        let (description, arguments, result) = match name {
            ToolName::FrameSelection => (
                "Re-sample the video: keep frames relevant to the query while avoiding near-duplicates.",
                vec![
                    ArgSpec::new("query", Text, true, "what the frames should show"),
                    ArgSpec::new("k", Integer, false, "number of frames to return"),
                ],
                ResultKind::NewFrameSet,
            ),
            ToolName::ObjectTracking => (
                "Track an object across the current frames and mark its center in each frame.",
                vec![ArgSpec::new("object", Text, true, "object to track")],
                ResultKind::AnnotatedFrames,
            ),
            ToolName::TemporalGrounding => (
                "Find the video segment matching a description and trim the video to it.",
                vec![ArgSpec::new("query", Text, true, "event to localize")],
                ResultKind::Segment,
            ),
            ToolName::ImageGrounding => (
                "Locate a described region in one frame.",
                vec![
                    ArgSpec::new("frame", Integer, true, "frame index"),
                    ArgSpec::new("label", Text, true, "region description"),
                ],
                ResultKind::Region,
            ),
            ToolName::DepthEstimation => (
                "Estimate relative per-pixel depth for one frame.",
                vec![ArgSpec::new("frame", Integer, true, "frame index")],
                ResultKind::DepthMap,
            ),
            ToolName::Zoom => (
                "Crop one frame to a box and enlarge it.",
                vec![
                    ArgSpec::new("frame", Integer, true, "frame index"),
                    ArgSpec::new("bbox", BoundingBox, true, "[x, y, w, h] in pixels"),
                ],
                ResultKind::CroppedImage,
            ),
        };
        Self {
            name,
            description: description.into(),
            arguments,
            result,
        }
    }

    /// Checks argument names and types. Unknown arguments are rejected.
    pub fn validate(&self, arguments: &Map<String, Value>) -> Result<()> {
        let fail = |reason: String| Error::InvalidArguments {
            tool: self.name,
            reason,
        };
        for key in arguments.keys() {
            if !self.arguments.iter().any(|a| &a.name == key) {
                return Err(fail(format!("unknown argument `{key}`")));
            }
        }
        for arg in &self.arguments {
            match arguments.get(&arg.name) {
                None if arg.required => {
                    return Err(fail(format!("missing argument `{}`", arg.name)))
                }
                None => {}
                Some(v) => {
                    let ok = match arg.ty {
                        ArgType::Text => v.as_str().is_some_and(|s| !s.trim().is_empty()),
                        ArgType::Integer => v.as_u64().is_some(),
                        ArgType::BoundingBox => BBox::from_value(v).is_some(),
                    };
                    if !ok {
                        return Err(fail(format!(
                            "argument `{}` is not a valid {:?}",
                            arg.name, arg.ty
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Axis-aligned box in pixels, serialized as `[x, y, w, h]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 4]", into = "[u32; 4]")]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    pub fn from_value(v: &Value) -> Option<Self> {
        let arr = v.as_array()?;
        if arr.len() != 4 {
            return None;
        }
        let mut it = arr.iter().map(|x| x.as_u64().and_then(|n| u32::try_from(n).ok()));
        let b = BBox::new(it.next()??, it.next()??, it.next()??, it.next()??);
        (b.w >= 1 && b.h >= 1).then_some(b)
    }

    pub fn fits(&self, width: u32, height: u32) -> bool {
        u64::from(self.x) + u64::from(self.w) <= u64::from(width)
            && u64::from(self.y) + u64::from(self.h) <= u64::from(height)
    }
}

impl From<[u32; 4]> for BBox {
    fn from([x, y, w, h]: [u32; 4]) -> Self {
        Self { x, y, w, h }
    }
}

impl From<BBox> for [u32; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub tool: ToolName,
    pub arguments: Map<String, Value>,
    pub round: usize,
}

impl ToolCall {
    pub fn new(tool: ToolName, arguments: Value, round: usize) -> Self {
        let arguments = match arguments {
            Value::Object(m) => m,
            _ => Map::new(),
        };
        Self {
            tool,
            arguments,
            round,
        }
    }

    pub fn text_arg(&self, name: &str) -> Option<&str> {
        self.arguments.get(name).and_then(Value::as_str)
    }

    pub fn int_arg(&self, name: &str) -> Option<u64> {
        self.arguments.get(name).and_then(Value::as_u64)
    }

    fn require_text(&self, name: &str) -> Result<&str> {
        self.text_arg(name).ok_or_else(|| self.missing(name))
    }

    fn require_int(&self, name: &str) -> Result<u64> {
        self.int_arg(name).ok_or_else(|| self.missing(name))
    }

    fn missing(&self, name: &str) -> Error {
        Error::InvalidArguments {
            tool: self.tool,
            reason: format!("missing argument `{name}`"),
        }
    }
}

/// Tracked object marker on one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub frame: usize,
    /// `(x, y)` in pixels.
    pub center: [f64; 2],
    #[serde(default = "default_radius")]
    pub radius: f64,
    pub object_id: u32,
    #[serde(default)]
    pub label: String,
}

pub const DEFAULT_MARKER_RADIUS: f64 = 4.0;

fn default_radius() -> f64 {
    DEFAULT_MARKER_RADIUS
}

/// Relative depth in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthMap {
    pub frame: usize,
    pub width: u32,
    pub height: u32,
    pub values: Vec<f64>,
}

impl DepthMap {
    pub fn validate(&self) -> Result<()> {
        if self.values.len() as u64 != u64::from(self.width) * u64::from(self.height) {
            return Err(Error::Parse(format!(
                "depth map for frame {} has {} values for {}x{}",
                self.frame,
                self.values.len(),
                self.width,
                self.height
            )));
        }
        if self.values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Parse(format!(
                "depth map for frame {} has values outside [0, 1]",
                self.frame
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSetPayload {
    pub frames: Vec<FrameRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedPayload {
    pub frames: Vec<FrameRef>,
    pub annotations: Vec<Annotation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentPayload {
    pub t0: f64,
    pub t1: f64,
    pub frames: Vec<FrameRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionPayload {
    pub frame: usize,
    pub label: String,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CroppedPayload {
    pub frame: usize,
    pub bbox: BBox,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorPayload {
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Payload {
    FrameSet(FrameSetPayload),
    Annotated(AnnotatedPayload),
    Segment(SegmentPayload),
    Region(RegionPayload),
    DepthMap(DepthMap),
    Cropped(CroppedPayload),
    Error(ErrorPayload),
}

impl Payload {
    pub fn kind(&self) -> ResultKind {
        match self {
            Payload::FrameSet(_) => ResultKind::NewFrameSet,
            Payload::Annotated(_) => ResultKind::AnnotatedFrames,
            Payload::Segment(_) => ResultKind::Segment,
            Payload::Region(_) => ResultKind::Region,
            Payload::DepthMap(_) => ResultKind::DepthMap,
            Payload::Cropped(_) => ResultKind::CroppedImage,
            Payload::Error(_) => ResultKind::Error,
        }
    }

    /// Decodes a payload whose shape is determined by `kind`.
    pub fn from_value(kind: ResultKind, value: Value) -> Result<Self> {
        Ok(match kind {
            ResultKind::NewFrameSet => Payload::FrameSet(serde_json::from_value(value)?),
            ResultKind::AnnotatedFrames => Payload::Annotated(serde_json::from_value(value)?),
            ResultKind::Segment => Payload::Segment(serde_json::from_value(value)?),
            ResultKind::Region => Payload::Region(serde_json::from_value(value)?),
            ResultKind::DepthMap => Payload::DepthMap(serde_json::from_value(value)?),
            ResultKind::CroppedImage => Payload::Cropped(serde_json::from_value(value)?),
            ResultKind::Error => Payload::Error(serde_json::from_value(value)?),
        })
    }

    /// Frames this payload replaces the current observation set with.
    pub fn replacement_frames(&self) -> Option<&[FrameRef]> {
        match self {
            Payload::FrameSet(p) => Some(&p.frames),
            Payload::Segment(p) => Some(&p.frames),
            _ => None,
        }
    }

    /// Frames shown to the model alongside the result text.
    pub fn visual_refs(&self) -> &[FrameRef] {
        match self {
            Payload::FrameSet(p) => &p.frames,
            Payload::Annotated(p) => &p.frames,
            Payload::Segment(p) => &p.frames,
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    #[default]
    Mock,
    Remote,
    Local,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawToolResult")]
pub struct ToolResult {
    pub kind: ResultKind,
    pub payload: Payload,
    /// Visual tokens the result adds to the context.
    pub token_cost: u64,
    #[serde(default)]
    pub provenance: Provenance,
}

#[derive(Deserialize)]
struct RawToolResult {
    kind: ResultKind,
    payload: Value,
    token_cost: u64,
    #[serde(default)]
    provenance: Provenance,
}

impl TryFrom<RawToolResult> for ToolResult {
    type Error = Error;

    fn try_from(raw: RawToolResult) -> Result<Self> {
        Ok(Self {
            kind: raw.kind,
            payload: Payload::from_value(raw.kind, raw.payload)?,
            token_cost: raw.token_cost,
            provenance: raw.provenance,
        })
    }
}

impl ToolResult {
    pub fn new(payload: Payload, token_cost: u64, provenance: Provenance) -> Self {
        Self {
            kind: payload.kind(),
            payload,
            token_cost,
            provenance,
        }
    }

    pub fn frames(frames: Vec<FrameRef>, provenance: Provenance) -> Self {
        let cost = frames.iter().map(FrameRef::visual_tokens).sum();
        Self::new(Payload::FrameSet(FrameSetPayload { frames }), cost, provenance)
    }

    pub fn error(message: impl Into<String>) -> Self {
        Self::new(
            Payload::Error(ErrorPayload {
                message: message.into(),
            }),
            0,
            Provenance::Local,
        )
    }

    pub fn is_error(&self) -> bool {
        self.kind == ResultKind::Error
    }

    /// One-paragraph description given to the model.
    pub fn summary(&self) -> String {
        fn indices(frames: &[FrameRef]) -> String {
            let v: Vec<String> = frames.iter().map(|f| f.index.to_string()).collect();
            v.join(", ")
        }
        match &self.payload {
            Payload::FrameSet(p) => format!("Selected frames: [{}].", indices(&p.frames)),
            Payload::Annotated(p) => {
                let mut ids: Vec<u32> = p.annotations.iter().map(|a| a.object_id).collect();
                ids.sort_unstable();
                ids.dedup();
                format!(
                    "Tracked {} object(s) across frames [{}]; each object keeps one marker color.",
                    ids.len(),
                    indices(&p.frames)
                )
            }
            Payload::Segment(p) => format!(
                "Segment {:.2}s to {:.2}s with frames [{}].",
                p.t0,
                p.t1,
                indices(&p.frames)
            ),
            Payload::Region(p) => format!(
                "`{}` in frame {} at [x={}, y={}, w={}, h={}].",
                p.label, p.frame, p.bbox.x, p.bbox.y, p.bbox.w, p.bbox.h
            ),
            Payload::DepthMap(p) => {
                format!("Relative depth map for frame {} ({}x{}).", p.frame, p.width, p.height)
            }
            Payload::Cropped(p) => format!(
                "Zoomed frame {} to [x={}, y={}, w={}, h={}], shown at {}x{}.",
                p.frame, p.bbox.x, p.bbox.y, p.bbox.w, p.bbox.h, p.width, p.height
            ),
            Payload::Error(p) => format!("Tool error: {}", p.message),
        }
    }
}

/// What a backend may look at while serving a call.
#[derive(Debug, Clone, Copy)]
pub struct ToolContext<'a> {
    pub manifest: &'a VideoManifest,
    /// The current observation set.
    pub frames: &'a [FrameRef],
    /// Frame embeddings addressed by [`crate::ingestion::FrameMeta::embedding_row`].
    pub frame_embeddings: Option<&'a [Embedding]>,
    pub selection: SelectionConfig,
}

pub trait ToolBackend: Send + Sync {
    fn invoke(&self, call: &ToolCall, ctx: &ToolContext<'_>) -> Result<ToolResult>;
}

impl<F> ToolBackend for F
where
    F: Fn(&ToolCall, &ToolContext<'_>) -> Result<ToolResult> + Send + Sync,
{
    fn invoke(&self, call: &ToolCall, ctx: &ToolContext<'_>) -> Result<ToolResult> {
        self(call, ctx)
    }
}

struct Registered {
    spec: ToolSpec,
    backend: Arc<dyn ToolBackend>,
}

/// Maps tool names to specs and backends. Built once, then shared.
#[derive(Default, Clone)]
pub struct ToolRegistry {
    tools: BTreeMap<ToolName, Arc<Registered>>,
}

impl fmt::Debug for ToolRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.tools.keys()).finish()
    }
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, spec: ToolSpec, backend: impl ToolBackend + 'static) -> Result<&mut Self> {
        self.register_shared(spec, Arc::new(backend))
    }

    pub fn register_shared(&mut self, spec: ToolSpec, backend: Arc<dyn ToolBackend>) -> Result<&mut Self> {
        if self.tools.contains_key(&spec.name) {
            return Err(Error::DuplicateTool(spec.name));
        }
        self.tools.insert(spec.name, Arc::new(Registered { spec, backend }));
        Ok(self)
    }

    /// Builder form of [`register`](Self::register).
    pub fn with(mut self, spec: ToolSpec, backend: impl ToolBackend + 'static) -> Result<Self> {
        self.register(spec, backend)?;
        Ok(self)
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn names(&self) -> impl Iterator<Item = ToolName> + '_ {
        self.tools.keys().copied()
    }

    pub fn specs(&self) -> impl Iterator<Item = &ToolSpec> + '_ {
        self.tools.values().map(|r| &r.spec)
    }

    pub fn spec(&self, name: ToolName) -> Option<&ToolSpec> {
        self.tools.get(&name).map(|r| &r.spec)
    }

    /// Resolves a tool name and validates arguments against its schema.
    pub fn validate_call(&self, tool: &str, arguments: Map<String, Value>, round: usize) -> Result<ToolCall> {
        let name: ToolName = tool.parse()?;
        let spec = self
            .spec(name)
            .ok_or_else(|| Error::UnknownTool(tool.to_string()))?;
        spec.validate(&arguments)?;
        Ok(ToolCall {
            tool: name,
            arguments,
            round,
        })
    }

    pub fn dispatch(&self, call: &ToolCall, ctx: &ToolContext<'_>) -> Result<ToolResult> {
        let entry = self
            .tools
            .get(&call.tool)
            .ok_or_else(|| Error::UnknownTool(call.tool.to_string()))?;
        entry.spec.validate(&call.arguments)?;
        entry.backend.invoke(call, ctx)
    }
}
