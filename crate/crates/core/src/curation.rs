//! Two-stage curation of training trajectories.
//!
//! Stage 1 asks the model in plain text. A correct answer keeps the text
//! chain of thought. Otherwise stage 2 asks the same question with tools; a
//! correct answer keeps the visual trajectory. Everything else is discarded.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{normalize_rows, parse_embedding_matrix, Embedding};
use crate::error::{Error, Result};
use crate::ingestion::{initial_frames, VideoManifest, DEFAULT_TARGET_FPS};
use crate::metrics::{em1, extract_option_letter, option_match};
use crate::orchestrator::{run_episode, Episode, EpisodeConfig, ModelClient, Trace};
use crate::selection::SelectionConfig;
use crate::tooling::{Payload, ToolRegistry};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MediaType {
    #[default]
    Video,
    Scene3d,
    Image,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceSample {
    pub id: String,
    pub question: String,
    pub answer: String,
    pub manifest: VideoManifest,
    pub frame_embeddings: Option<Vec<Embedding>>,
    /// Dataset name.
    pub source: String,
    pub media: MediaType,
}

impl SourceSample {
    pub fn new(
        id: impl Into<String>,
        question: impl Into<String>,
        answer: impl Into<String>,
        manifest: VideoManifest,
        source: impl Into<String>,
    ) -> Result<Self> {
        let s = Self {
            id: id.into(),
            question: question.into(),
            answer: answer.into(),
            manifest,
            frame_embeddings: None,
            source: source.into(),
            media: MediaType::Video,
        };
        if s.answer.trim().is_empty() {
            return Err(Error::InvalidManifest(format!("sample `{}` has an empty answer key", s.id)));
        }
        Ok(s)
    }

    pub fn with_embeddings(mut self, embeddings: Vec<Embedding>) -> Self {
        self.frame_embeddings = Some(embeddings);
        self
    }
}

/// One line of a source corpus file. Paths are relative to the corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub question: String,
    pub answer: String,
    pub manifest: String,
    pub source: String,
    #[serde(default)]
    pub media: MediaType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<String>,
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<SourceSample>> {
    let path = path.as_ref();
    let dir = path.parent().unwrap_or(Path::new("."));
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusRecord = serde_json::from_str(line)
            .map_err(|e| Error::Parse(format!("corpus line {}: {e}", n + 1)))?;
        let manifest = VideoManifest::load(dir.join(&rec.manifest))?;
        let mut sample = SourceSample::new(rec.id, rec.question, rec.answer, manifest, rec.source)?;
        sample.media = rec.media;
        if let Some(e) = rec.embeddings {
            let rows = parse_embedding_matrix(&std::fs::read_to_string(dir.join(e))?)?;
            sample.frame_embeddings = Some(normalize_rows(&rows)?);
        }
        out.push(sample);
    }
    Ok(out)
}

/// Decides whether an answer matches the key.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Judge {
    ExactMatch,
    OptionLetter,
    /// Option letter when the key is a bare letter `A`–`E`, else exact match.
    #[default]
    Auto,
}

impl Judge {
    pub fn passes(self, answer: &str, key: &str) -> bool {
        match self {
            Self::ExactMatch => em1(answer, key),
            Self::OptionLetter => option_match(answer, key),
            Self::Auto => {
                let k = key.trim();
                if k.len() == 1 && extract_option_letter(k).is_some() {
                    option_match(answer, k)
                } else {
                    em1(answer, key)
                }
            }
        }
    }
}

impl std::str::FromStr for Judge {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact_match" | "exact" => Ok(Self::ExactMatch),
            "option_letter" | "letter" => Ok(Self::OptionLetter),
            "auto" => Ok(Self::Auto),
            other => Err(Error::InvalidConfig(format!("unknown judge `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    TextCot,
    VisualTrajectory,
}

/// Only correct samples are ever emitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Correct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub id: String,
    pub kind: SampleKind,
    pub source: String,
    pub media: MediaType,
    pub verdict: Verdict,
    pub trace: Trace,
}

impl TrainingSample {
    pub fn validate(&self) -> Result<()> {
        let calls = self.trace.tool_call_count();
        let ok = match self.kind {
            SampleKind::TextCot => calls == 0,
            SampleKind::VisualTrajectory => calls >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidManifest(format!(
                "sample `{}`: {:?} with {calls} tool calls",
                self.id, self.kind
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discarded {
    pub id: String,
    pub source: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    TextCot(TrainingSample),
    VisualTraj(TrainingSample),
    Discard(Discarded),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurationConfig {
    pub episode: EpisodeConfig,
    pub selection: SelectionConfig,
    pub judge: Judge,
    pub target_fps: f64,
    /// Upper bound on the initial observation frames.
    pub initial_frames: usize,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self {
            episode: EpisodeConfig::default(),
            selection: SelectionConfig::default(),
            judge: Judge::Auto,
            target_fps: DEFAULT_TARGET_FPS,
            initial_frames: 16,
        }
    }
}

pub fn initial_observation(manifest: &VideoManifest, cfg: &CurationConfig) -> Result<Vec<usize>> {
    initial_frames(manifest, cfg.target_fps, cfg.initial_frames)
}

pub fn curate_sample(
    model: &dyn ModelClient,
    registry: &ToolRegistry,
    sample: &SourceSample,
    cfg: &CurationConfig,
) -> Outcome {
    let discard = |reason: String| {
        Outcome::Discard(Discarded {
            id: sample.id.clone(),
            source: sample.source.clone(),
            reason,
        })
    };
    let frames = match initial_observation(&sample.manifest, cfg)
        .and_then(|ix| sample.manifest.frame_refs(&ix))
    {
        Ok(f) => f,
        Err(e) => return discard(format!("preprocessing: {e}")),
    };
    let mut episode = Episode::new(&sample.question, &sample.manifest, frames)
        .with_id(&sample.id)
        .with_selection(cfg.selection);
    if let Some(e) = &sample.frame_embeddings {
        episode = episode.with_embeddings(e);
    }
    let keep = |kind, trace| TrainingSample {
        id: sample.id.clone(),
        kind,
        source: sample.source.clone(),
        media: sample.media,
        verdict: Verdict::Correct,
        trace,
    };
    let correct = |t: &Trace| {
        t.final_answer
            .as_deref()
            .is_some_and(|a| cfg.judge.passes(a, &sample.answer))
    };

    let text = match run_episode(model, &ToolRegistry::new(), &episode, &cfg.episode) {
        Ok(t) => t,
        Err(e) => return discard(format!("text stage: {e}")),
    };
    if correct(&text) {
        return Outcome::TextCot(keep(SampleKind::TextCot, text));
    }
    let visual = match run_episode(model, registry, &episode, &cfg.episode) {
        Ok(t) => t,
        Err(e) => return discard(format!("tool stage: {e}")),
    };
    if !correct(&visual) {
        return discard("wrong in both stages".into());
    }
    if visual.tool_call_count() == 0 {
        return discard("tool stage answered without calling a tool".into());
    }
    let failed = visual.rounds.iter().enumerate().find_map(|(i, r)| {
        r.tool_result
            .as_ref()
            .and_then(|res| match &res.payload {
                Payload::Error(e) => Some(format!("tool error in round {}: {}", i + 1, e.message)),
                _ => None,
            })
    });
    if let Some(reason) = failed {
        return discard(reason);
    }
    Outcome::VisualTraj(keep(SampleKind::VisualTrajectory, visual))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindCounts {
    pub text_cot: usize,
    pub visual_trajectory: usize,
    pub discard: usize,
}

impl KindCounts {
    pub fn total(&self) -> usize {
        self.text_cot + self.visual_trajectory + self.discard
    }

    fn merge(&mut self, o: &Self) {
        self.text_cot += o.text_cot;
        self.visual_trajectory += o.visual_trajectory;
        self.discard += o.discard;
    }
}

/// Counts only; derived rates are computed on output so that merging is
/// associative and exact.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorpusStats {
    pub counts: KindCounts,
    pub visual_tool_calls: usize,
    pub per_source: BTreeMap<String, KindCounts>,
}

impl CorpusStats {
    pub fn of_outcome(o: &Outcome) -> Self {
        let mut s = Self::default();
        s.add(o);
        s
    }

    fn add(&mut self, o: &Outcome) {
        let (source, bump): (&str, fn(&mut KindCounts)) = match o {
            Outcome::TextCot(t) => (&t.source, |c| c.text_cot += 1),
            Outcome::VisualTraj(t) => {
                self.visual_tool_calls += t.trace.tool_call_count();
                (&t.source, |c| c.visual_trajectory += 1)
            }
            Outcome::Discard(d) => (&d.source, |c| c.discard += 1),
        };
        bump(&mut self.counts);
        bump(self.per_source.entry(source.to_string()).or_default());
    }

    pub fn merge(mut self, other: Self) -> Self {
        self.counts.merge(&other.counts);
        self.visual_tool_calls += other.visual_tool_calls;
        for (k, v) in other.per_source {
            self.per_source.entry(k).or_default().merge(&v);
        }
        self
    }

    pub fn from_dataset(d: &Dataset) -> Self {
        d.outcomes().fold(Self::default(), |mut s, o| {
            s.add(&o);
            s
        })
    }

    pub fn samples(&self) -> usize {
        self.counts.total()
    }

    pub fn discard_rate(&self) -> f64 {
        match self.samples() {
            0 => 0.0,
            n => self.counts.discard as f64 / n as f64,
        }
    }

    /// `None` when there are no visual trajectories.
    pub fn mean_tool_calls(&self) -> Option<f64> {
        match self.counts.visual_trajectory {
            0 => None,
            n => Some(self.visual_tool_calls as f64 / n as f64),
        }
    }

    pub fn summary(&self) -> StatsSummary {
        StatsSummary {
            samples: self.samples(),
            counts: self.counts,
            discard_rate: self.discard_rate(),
            visual_tool_calls: self.visual_tool_calls,
            mean_tool_calls: self.mean_tool_calls().unwrap_or(0.0),
            mean_tool_calls_defined: self.mean_tool_calls().is_some(),
            per_source: self.per_source.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub samples: usize,
    pub counts: KindCounts,
    pub discard_rate: f64,
    pub visual_tool_calls: usize,
    /// Reported as 0 when undefined; see `mean_tool_calls_defined`.
    pub mean_tool_calls: f64,
    pub mean_tool_calls_defined: bool,
    pub per_source: BTreeMap<String, KindCounts>,
}

/// Kept samples and discards, each in corpus order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<TrainingSample>,
    pub discards: Vec<Discarded>,
}

impl Dataset {
    pub fn from_outcomes(outcomes: impl IntoIterator<Item = Outcome>) -> Self {
        let mut d = Self::default();
        for o in outcomes {
            match o {
                Outcome::TextCot(s) | Outcome::VisualTraj(s) => d.samples.push(s),
                Outcome::Discard(x) => d.discards.push(x),
            }
        }
        d
    }

    fn outcomes(&self) -> impl Iterator<Item = Outcome> + '_ {
        let kept = self.samples.iter().map(|s| match s.kind {
            SampleKind::TextCot => Outcome::TextCot(s.clone()),
            SampleKind::VisualTrajectory => Outcome::VisualTraj(s.clone()),
        });
        kept.chain(self.discards.iter().cloned().map(Outcome::Discard))
    }

    pub fn validate(&self) -> Result<()> {
        self.samples.iter().try_for_each(TrainingSample::validate)
    }
}

/// Curates every sample on a pool of at most `workers` threads. Output order
/// follows the input.
pub fn curate_corpus(
    model: &dyn ModelClient,
    registry: &ToolRegistry,
    samples: &[SourceSample],
    cfg: &CurationConfig,
    workers: usize,
) -> Result<(Dataset, CorpusStats)> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("empty corpus"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
    let outcomes: Vec<Outcome> = pool.install(|| {
        samples
            .par_iter()
            .map(|s| curate_sample(model, registry, s, cfg))
            .collect()
    });
    let stats = outcomes
        .iter()
        .map(CorpusStats::of_outcome)
        .fold(CorpusStats::default(), CorpusStats::merge);
    Ok((Dataset::from_outcomes(outcomes), stats))
}

pub const DATASET_FORMAT: &str = "spacetime-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Record {
    Header {
        format: String,
        version: u32,
        samples: usize,
        discards: usize,
    },
    Sample(TrainingSample),
    Discard(Discarded),
}

/// Newline-delimited JSON: a header, then samples, then discards.
pub fn write_dataset(mut w: impl Write, d: &Dataset) -> Result<()> {
    d.validate()?;
    let header = Record::Header {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        samples: d.samples.len(),
        discards: d.discards.len(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for s in &d.samples {
        serde_json::to_writer(&mut w, &Record::Sample(s.clone()))?;
        w.write_all(b"\n")?;
    }
    for x in &d.discards {
        serde_json::to_writer(&mut w, &Record::Discard(x.clone()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_dataset(r: impl BufRead) -> Result<Dataset> {
    let mut lines = r.lines();
    let first = lines.next().ok_or(Error::EmptyInput("dataset file has no header"))??;
    let (want_samples, want_discards) = match serde_json::from_str(&first)
        .map_err(|e| Error::Parse(format!("dataset header: {e}")))?
    {
        Record::Header {
            format,
            version,
            samples,
            discards,
        } if format == DATASET_FORMAT && version == DATASET_VERSION => (samples, discards),
        _ => return Err(Error::Parse("first record is not a dataset header".into())),
    };
    let mut d = Dataset::default();
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line).map_err(|e| Error::Parse(format!("dataset line {}: {e}", n + 2)))? {
            Record::Sample(s) => d.samples.push(s),
            Record::Discard(x) => d.discards.push(x),
            Record::Header { .. } => return Err(Error::Parse("repeated dataset header".into())),
        }
    }
    if (d.samples.len(), d.discards.len()) != (want_samples, want_discards) {
        return Err(Error::Parse("record counts disagree with the header".into()));
    }
    d.validate()?;
    Ok(d)
}

pub fn export_training_records(path: impl AsRef<Path>, d: &Dataset) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_dataset(&mut w, d)?;
    w.flush()?;
    Ok(())
}

pub fn import_training_records(path: impl AsRef<Path>) -> Result<Dataset> {
    read_dataset(std::io::BufReader::new(std::fs::File::open(path)?))
}
