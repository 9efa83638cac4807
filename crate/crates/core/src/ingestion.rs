//! Frame manifests and the preprocessing plans applied before frames reach a
//! model: fixed-rate downsampling, a strict pixel budget per frame, and
//! visual-token estimates.
//!
//! Videos are never decoded here. An external extractor writes frames plus a
//! manifest; everything in this module plans over that manifest.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TARGET_FPS: f64 = 4.0;
/// Frames must hold strictly fewer pixels than this.
pub const DEFAULT_MAX_PIXELS: u64 = 50_176;
pub const DEFAULT_PATCH: u32 = 14;

/// Timestamps within this many seconds count as equal when matching ticks.
const TIME_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMeta {
    pub index: usize,
    /// Seconds from the start of the video.
    pub timestamp: f64,
    pub width: u32,
    pub height: u32,
    pub uri: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_row: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoManifest {
    pub native_fps: f64,
    pub duration: f64,
    pub frames: Vec<FrameMeta>,
}

/// A frame as presented to the model, after the pixel budget is applied.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameRef {
    pub index: usize,
    pub uri: String,
    pub width: u32,
    pub height: u32,
}

impl FrameRef {
    pub fn visual_tokens(&self) -> u64 {
        estimate_visual_tokens(self.width, self.height, DEFAULT_PATCH)
    }
}

impl VideoManifest {
    pub fn new(native_fps: f64, duration: f64, frames: Vec<FrameMeta>) -> Result<Self> {
        let m = Self {
            native_fps,
            duration,
            frames,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.native_fps > 0.0 && self.native_fps.is_finite()) {
            return Err(Error::InvalidManifest(format!(
                "fps must be positive, got {}",
                self.native_fps
            )));
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(Error::InvalidManifest(format!(
                "duration must be non-negative, got {}",
                self.duration
            )));
        }
        for pair in self.frames.windows(2) {
            #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN fails too
            if !(pair[1].timestamp > pair[0].timestamp) {
                return Err(Error::InvalidManifest(format!(
                    "timestamps not strictly increasing at frame {}",
                    pair[1].index
                )));
            }
        }
        if let Some(f) = self.frames.iter().find(|f| f.width == 0 || f.height == 0) {
            return Err(Error::InvalidManifest(format!("frame {} has zero area", f.index)));
        }
        Ok(())
    }

    /// Synthetic manifest with frames at `i / fps` for `i` in `0..count`.
    pub fn uniform(native_fps: f64, count: usize, width: u32, height: u32) -> Self {
        let frames = (0..count)
            .map(|i| FrameMeta {
                index: i,
                timestamp: i as f64 / native_fps,
                width,
                height,
                uri: format!("frame_{i:06}.jpg"),
                embedding_row: Some(i),
            })
            .collect();
        Self {
            native_fps,
            duration: count as f64 / native_fps,
            frames,
        }
    }

    pub fn frame(&self, index: usize) -> Option<&FrameMeta> {
        self.frames.iter().find(|f| f.index == index)
    }

    /// References for the given frame indices with the default pixel budget
    /// applied. Unknown indices are an error.
    pub fn frame_refs(&self, indices: &[usize]) -> Result<Vec<FrameRef>> {
        indices
            .iter()
            .map(|&i| {
                self.frame(i)
                    .map(FrameRef::from)
                    .ok_or_else(|| Error::OutOfBounds(format!("no frame with index {i}")))
            })
            .collect()
    }

    pub fn all_refs(&self) -> Vec<FrameRef> {
        self.frames.iter().map(FrameRef::from).collect()
    }

    /// Parses the line-oriented manifest format:
    ///
    /// ```text
    /// fps=30 duration=3
    /// 0 0.000 1920 1080 frames/000000.jpg 0
    /// 1 0.033 1920 1080 frames/000001.jpg
    /// ```
    ///
    /// The trailing embedding row is optional. Blank lines and `#` comments
    /// are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(n, l)| (n + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Parse("manifest is empty".into()))?;
        let (mut fps, mut duration) = (None, None);
        for field in header.split_whitespace() {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("bad header field `{field}`")))?;
            let value: f64 = value
                .parse()
                .map_err(|_| Error::Parse(format!("bad header value `{field}`")))?;
            match key {
                "fps" => fps = Some(value),
                "duration" => duration = Some(value),
                _ => return Err(Error::Parse(format!("unknown header key `{key}`"))),
            }
        }
        let (Some(fps), Some(duration)) = (fps, duration) else {
            return Err(Error::Parse("header needs `fps=` and `duration=`".into()));
        };
        let mut frames = Vec::new();
        for (n, line) in lines {
            let parts: Vec<&str> = line.split_whitespace().collect();
            if !(5..=6).contains(&parts.len()) {
                return Err(Error::Parse(format!(
                    "line {n}: expected `index timestamp width height uri [embedding_row]`"
                )));
            }
            let bad = |what: &str| Error::Parse(format!("line {n}: bad {what}"));
            frames.push(FrameMeta {
                index: parts[0].parse().map_err(|_| bad("index"))?,
                timestamp: parts[1].parse().map_err(|_| bad("timestamp"))?,
                width: parts[2].parse().map_err(|_| bad("width"))?,
                height: parts[3].parse().map_err(|_| bad("height"))?,
                uri: parts[4].to_string(),
                embedding_row: parts
                    .get(5)
                    .map(|s| s.parse().map_err(|_| bad("embedding row")))
                    .transpose()?,
            });
        }
        Self::new(fps, duration, frames)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("fps={} duration={}\n", self.native_fps, self.duration);
        for f in &self.frames {
            let _ = write!(out, "{} {} {} {} {}", f.index, f.timestamp, f.width, f.height, f.uri);
            if let Some(row) = f.embedding_row {
                let _ = write!(out, " {row}");
            }
            out.push('\n');
        }
        out
    }
}

impl From<&FrameMeta> for FrameRef {
    fn from(f: &FrameMeta) -> Self {
        let (width, height) = resize_plan(f.width, f.height, DEFAULT_MAX_PIXELS);
        Self {
            index: f.index,
            uri: f.uri.clone(),
            width,
            height,
        }
    }
}

/// Frame indices kept when resampling to `target_fps`.
///
/// Ticks fall at `n / target_fps`; each tick takes the earliest frame whose
/// timestamp is at or after it and has not already been taken. A video that
/// is already at or below the target rate keeps every frame.
pub fn downsample_plan(manifest: &VideoManifest, target_fps: f64) -> Result<Vec<usize>> {
    if !(target_fps > 0.0 && target_fps.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "target fps must be positive, got {target_fps}"
        )));
    }
    let frames = &manifest.frames;
    let last = frames.last().ok_or(Error::EmptyManifest)?;
    if manifest.native_fps <= target_fps {
        return Ok(frames.iter().map(|f| f.index).collect());
    }
    let mut out = Vec::new();
    let mut cursor = 0;
    for tick_no in 0u64.. {
        let tick = tick_no as f64 / target_fps;
        if tick > last.timestamp + TIME_TOLERANCE {
            break;
        }
        while cursor < frames.len() && frames[cursor].timestamp < tick - TIME_TOLERANCE {
            cursor += 1;
        }
        if cursor == frames.len() {
            break;
        }
        out.push(frames[cursor].index);
        cursor += 1;
    }
    Ok(out)
}

/// The frames an episode starts from: the fixed-rate plan, then an even
/// spread down to at most `max_frames`.
pub fn initial_frames(manifest: &VideoManifest, target_fps: f64, max_frames: usize) -> Result<Vec<usize>> {
    let sampled = downsample_plan(manifest, target_fps)?;
    Ok(crate::selection::uniform_sample(sampled.len(), max_frames)
        .into_iter()
        .map(|i| sampled[i])
        .collect())
}

/// Output size honouring a strict pixel budget (`w · h < max_pixels`).
///
/// Frames already under budget are unchanged. Larger frames are scaled by
/// `sqrt(max_pixels / (w · h))` with both sides floored (exact integer
/// arithmetic), then the longer side is trimmed one pixel at a time until the
/// product is strictly below the budget.
pub fn resize_plan(width: u32, height: u32, max_pixels: u64) -> (u32, u32) {
    let (w, h) = (u128::from(width.max(1)), u128::from(height.max(1)));
    let max = u128::from(max_pixels.max(2));
    if w * h < max {
        return (width.max(1), height.max(1));
    }
    // floor(w · sqrt(max / (w·h))) = floor(sqrt(w · max / h))
    let mut nw = isqrt(w * max / h).max(1);
    let mut nh = isqrt(h * max / w).max(1);
    while nw * nh >= max {
        if nw >= nh && nw > 1 {
            nw -= 1;
        } else {
            nh -= 1;
        }
    }
    (nw as u32, nh as u32)
}

fn isqrt(n: u128) -> u128 {
    if n < 2 {
        return n;
    }
    let mut x = (n as f64).sqrt() as u128;
    while x * x > n {
        x -= 1;
    }
    while (x + 1) * (x + 1) <= n {
        x += 1;
    }
    x
}

/// Patch-grid token estimate: `ceil(w / patch) · ceil(h / patch)`.
pub fn estimate_visual_tokens(width: u32, height: u32, patch: u32) -> u64 {
    let patch = u64::from(patch.max(1));
    u64::from(width).div_ceil(patch) * u64::from(height).div_ceil(patch)
}
