//! The multi-turn episode loop.
//!
//! An episode starts from a question and an initial frame set. Each round
//! the model sees the (possibly evicted) history and either emits one tool
//! call, whose result becomes new visual context for the next round, or
//! answers. Everything that happened is kept in a [`Trace`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::ingestion::{FrameRef, VideoManifest};
use crate::selection::SelectionConfig;
use crate::tooling::{ToolCall, ToolContext, ToolName, ToolRegistry, ToolResult};

pub mod client;
pub mod parse;

pub use client::{
    ChatRequest, ContentItem, EpisodeMode, Message, ModelClient, RemoteModelClient, RequestMeta,
    Role, ScriptEntry, ScriptedModel,
};
pub use parse::{estimate_text_tokens, extract_answer, parse_tool_call, TOOL_FENCE};

pub const DEFAULT_MAX_ROUNDS: usize = 8;
pub const DEFAULT_CONTEXT_BUDGET: u64 = 32_768;
/// Stands in for evicted rounds.
pub const EVICTION_STUB: &str = "[earlier rounds omitted]";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRound {
    pub model_text: String,
    pub tool_call: Option<ToolCall>,
    pub tool_result: Option<ToolResult>,
    pub text_tokens_in: u64,
    pub text_tokens_out: u64,
    pub visual_tokens_in: u64,
}

impl TraceRound {
    /// Tokens this round adds to later contexts.
    pub fn context_cost(&self) -> u64 {
        let mut cost = estimate_text_tokens(&self.model_text);
        if let Some(r) = &self.tool_result {
            cost += estimate_text_tokens(&r.summary()) + r.token_cost;
        }
        cost
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Answer,
    MaxRounds,
    BudgetExhausted,
    ParseFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    #[serde(default)]
    pub id: String,
    pub question: String,
    pub initial_frames: Vec<FrameRef>,
    pub rounds: Vec<TraceRound>,
    pub final_answer: Option<String>,
    pub terminated_by: Termination,
}

impl Trace {
    pub fn new(id: impl Into<String>, question: impl Into<String>, initial_frames: Vec<FrameRef>) -> Self {
        Self {
            id: id.into(),
            question: question.into(),
            initial_frames,
            rounds: Vec::new(),
            final_answer: None,
            terminated_by: Termination::MaxRounds,
        }
    }

    pub fn tool_calls(&self) -> impl Iterator<Item = &ToolCall> + '_ {
        self.rounds.iter().filter_map(|r| r.tool_call.as_ref())
    }

    pub fn tool_call_count(&self) -> usize {
        self.tool_calls().count()
    }

    /// Question text plus initial frames; never evicted.
    pub fn base_cost(&self) -> u64 {
        estimate_text_tokens(&self.question)
            + self.initial_frames.iter().map(FrameRef::visual_tokens).sum::<u64>()
    }

    /// Pretty JSON with a trailing newline. Field order is fixed by the
    /// type definitions, so equal traces serialize to identical bytes.
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Which rounds survive eviction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContextView {
    /// Rounds `0..first_kept` are dropped.
    pub first_kept: usize,
    pub estimated_tokens: u64,
}

impl ContextView {
    pub fn evicted(&self) -> usize {
        self.first_kept
    }

    pub fn kept<'t>(&self, trace: &'t Trace) -> &'t [TraceRound] {
        &trace.rounds[self.first_kept..]
    }
}

/// Drops whole rounds, oldest first, until the estimated context fits.
///
/// The question, the initial frames and the latest round always survive;
/// when anything is dropped a one-line stub takes its place and is counted.
pub fn evict_to_budget(trace: &Trace, budget: u64) -> Result<ContextView> {
    let base = trace.base_cost();
    let costs: Vec<u64> = trace.rounds.iter().map(TraceRound::context_cost).collect();
    let total: u64 = base + costs.iter().sum::<u64>();
    if total <= budget {
        return Ok(ContextView {
            first_kept: 0,
            estimated_tokens: total,
        });
    }
    let stub = estimate_text_tokens(EVICTION_STUB);
    let floor = match costs.as_slice() {
        [] => base,
        [only] => base + only,
        [.., last] => base + last + stub,
    };
    if floor > budget {
        return Err(Error::BudgetTooSmall { budget, floor });
    }
    let mut estimated = total + stub;
    let mut first_kept = 0;
    while estimated > budget {
        estimated -= costs[first_kept];
        first_kept += 1;
    }
    Ok(ContextView {
        first_kept,
        estimated_tokens: estimated,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub max_rounds: usize,
    pub context_budget: u64,
    /// Allow at most one tool call before the answer.
    pub single_turn: bool,
    /// Passed through to the model untouched.
    pub decoding: Map<String, Value>,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        let decoding = match json!({"temperature": 0.0, "top_k": 1, "top_p": 0.001}) {
            Value::Object(m) => m,
            _ => unreachable!(),
        };
        Self {
            max_rounds: DEFAULT_MAX_ROUNDS,
            context_budget: DEFAULT_CONTEXT_BUDGET,
            single_turn: false,
            decoding,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_rounds == 0 {
            return Err(Error::InvalidConfig("max_rounds must be at least 1".into()));
        }
        Ok(())
    }
}

/// Inputs of one episode.
#[derive(Debug, Clone)]
pub struct Episode<'a> {
    pub id: String,
    pub question: String,
    pub manifest: &'a VideoManifest,
    pub initial_frames: Vec<FrameRef>,
    pub frame_embeddings: Option<&'a [Embedding]>,
    pub selection: SelectionConfig,
}

impl<'a> Episode<'a> {
    pub fn new(question: impl Into<String>, manifest: &'a VideoManifest, initial_frames: Vec<FrameRef>) -> Self {
        Self {
            id: String::new(),
            question: question.into(),
            manifest,
            initial_frames,
            frame_embeddings: None,
            selection: SelectionConfig::default(),
        }
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn with_embeddings(mut self, embeddings: &'a [Embedding]) -> Self {
        self.frame_embeddings = Some(embeddings);
        self
    }

    pub fn with_selection(mut self, selection: SelectionConfig) -> Self {
        self.selection = selection;
        self
    }
}

const TEXT_COT_PROMPT: &str = "You answer questions about a video. Think step by step in text, \
then give the final answer on its own line as `Answer: <answer>`.";

const SINGLE_TURN_SPENT: &str = "The tool budget for this question is used up. Do not call tools; \
give the final answer now as `Answer: <answer>`.";

fn tools_prompt(registry: &ToolRegistry, single_turn: bool) -> String {
    let mut s = String::from(
        "You answer questions about a video. You may think in space and time by calling tools that \
         return new visual evidence. To call a tool, write exactly one block:\n",
    );
    s.push_str(TOOL_FENCE);
    s.push_str("\n{\"tool\": \"<name>\", \"arguments\": {...}}\n```\n");
    if single_turn {
        s.push_str("You may call at most one tool for this question.\n");
    }
    s.push_str("Available tools:\n");
    for spec in registry.specs() {
        let args: Vec<String> = spec
            .arguments
            .iter()
            .map(|a| format!("{}{}: {:?}", a.name, if a.required { "" } else { "?" }, a.ty))
            .collect();
        s.push_str(&format!("- {}({}): {}\n", spec.name, args.join(", "), spec.description));
    }
    s.push_str("When you are done, give the final answer on its own line as `Answer: <answer>`.");
    s
}

fn frame_item(f: &FrameRef) -> ContentItem {
    ContentItem::Image {
        uri: f.uri.clone(),
        frame: Some(f.index),
        tokens: f.visual_tokens(),
    }
}

fn result_message(round_no: usize, result: &ToolResult) -> Message {
    let mut content = vec![ContentItem::Text {
        text: result.summary(),
    }];
    let refs = result.payload.visual_refs();
    if refs.is_empty() {
        if result.token_cost > 0 {
            content.push(ContentItem::Image {
                uri: format!("tool://round-{round_no}/{}", serde_json::to_value(result.kind).unwrap_or_default().as_str().unwrap_or("result")),
                frame: None,
                tokens: result.token_cost,
            });
        }
    } else {
        content.extend(refs.iter().map(frame_item));
    }
    Message {
        role: Role::Tool,
        content,
    }
}

/// Builds the chat request for the next model turn from the surviving
/// history.
pub fn assemble_request(
    trace: &Trace,
    view: &ContextView,
    registry: &ToolRegistry,
    tools_spent: bool,
    cfg: &EpisodeConfig,
) -> ChatRequest {
    let mode = if registry.is_empty() {
        EpisodeMode::TextCot
    } else {
        EpisodeMode::Tools
    };
    let system = match mode {
        EpisodeMode::TextCot => TEXT_COT_PROMPT.to_string(),
        EpisodeMode::Tools => tools_prompt(registry, cfg.single_turn),
    };
    let mut messages = vec![Message::text(Role::System, system)];
    let mut question = vec![ContentItem::Text {
        text: trace.question.clone(),
    }];
    question.extend(trace.initial_frames.iter().map(frame_item));
    messages.push(Message {
        role: Role::User,
        content: question,
    });
    if view.evicted() > 0 {
        messages.push(Message::text(Role::User, EVICTION_STUB));
    }
    for (offset, round) in view.kept(trace).iter().enumerate() {
        messages.push(Message::text(Role::Assistant, round.model_text.clone()));
        if let Some(result) = &round.tool_result {
            messages.push(result_message(view.first_kept + offset, result));
        }
    }
    if tools_spent {
        messages.push(Message::text(Role::User, SINGLE_TURN_SPENT));
    }
    ChatRequest {
        messages,
        decoding: cfg.decoding.clone(),
        meta: RequestMeta {
            episode_id: trace.id.clone(),
            question: trace.question.clone(),
            mode,
        },
    }
}

/// Runs one episode to completion.
///
/// Tool failures are recorded as error results and the episode continues;
/// model-client failures abort with an error. With an empty registry this is
/// the plain text chain-of-thought stage.
pub fn run_episode(
    model: &dyn ModelClient,
    registry: &ToolRegistry,
    episode: &Episode<'_>,
    cfg: &EpisodeConfig,
) -> Result<Trace> {
    cfg.validate()?;
    if episode.initial_frames.is_empty() {
        return Err(Error::EmptyInput("episode has no frames"));
    }
    let mut trace = Trace::new(&episode.id, &episode.question, episode.initial_frames.clone());
    if trace.base_cost() > cfg.context_budget {
        return Err(Error::BudgetTooSmall {
            budget: cfg.context_budget,
            floor: trace.base_cost(),
        });
    }
    let mut current_frames = episode.initial_frames.clone();
    let mut calls_made = 0;
    loop {
        if trace.rounds.len() >= cfg.max_rounds {
            trace.terminated_by = Termination::MaxRounds;
            break;
        }
        let view = match evict_to_budget(&trace, cfg.context_budget) {
            Ok(v) => v,
            Err(Error::BudgetTooSmall { .. }) => {
                trace.terminated_by = Termination::BudgetExhausted;
                break;
            }
            Err(e) => return Err(e),
        };
        let tools_spent = cfg.single_turn && calls_made >= 1;
        let request = assemble_request(&trace, &view, registry, tools_spent, cfg);
        let text = model.complete(&request)?;
        let (text_in, visual_in) = request.token_counts();
        let mut round = TraceRound {
            text_tokens_out: estimate_text_tokens(&text),
            model_text: text,
            tool_call: None,
            tool_result: None,
            text_tokens_in: text_in,
            visual_tokens_in: visual_in,
        };
        let round_no = trace.rounds.len();
        match parse_tool_call(&round.model_text, registry, round_no) {
            Ok(None) => {
                trace.final_answer = Some(extract_answer(&round.model_text));
                trace.rounds.push(round);
                trace.terminated_by = Termination::Answer;
                break;
            }
            Err(_) => {
                trace.rounds.push(round);
                trace.terminated_by = Termination::ParseFailure;
                break;
            }
            // suppressed: recorded without a call, the model is asked again
            Ok(Some(_)) if tools_spent => trace.rounds.push(round),
            Ok(Some(call)) => {
                let ctx = ToolContext {
                    manifest: episode.manifest,
                    frames: &current_frames,
                    frame_embeddings: episode.frame_embeddings,
                    selection: episode.selection,
                };
                let result = registry
                    .dispatch(&call, &ctx)
                    .unwrap_or_else(|e| ToolResult::error(e.to_string()));
                if let Some(frames) = result.payload.replacement_frames() {
                    current_frames = frames.to_vec();
                }
                calls_made += 1;
                round.tool_call = Some(call);
                round.tool_result = Some(result);
                trace.rounds.push(round);
            }
        }
    }
    Ok(trace)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TokenTotals {
    pub input_text: u64,
    pub input_visual: u64,
    pub output_text: u64,
}

impl TokenTotals {
    pub fn of(trace: &Trace) -> Self {
        let mut t = Self::default();
        for r in &trace.rounds {
            t.input_text += r.text_tokens_in;
            t.input_visual += r.visual_tokens_in;
            t.output_text += r.text_tokens_out;
        }
        t
    }

    pub fn merge(&mut self, other: &TokenTotals) {
        self.input_text += other.input_text;
        self.input_visual += other.input_visual;
        self.output_text += other.output_text;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TokenMeans {
    pub input_text: f64,
    pub input_visual: f64,
    pub output_text: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolUsage {
    pub calls: usize,
    /// Share of all tool calls, in percent.
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStats {
    pub traces: usize,
    pub tool_calls: usize,
    pub mean_tool_calls: f64,
    pub tool_usage: BTreeMap<ToolName, ToolUsage>,
    /// Number of traces by tool-call count.
    pub calls_per_trace: BTreeMap<usize, usize>,
    pub token_totals: TokenTotals,
    pub token_means: TokenMeans,
}

/// Tool-call and token aggregates over a set of traces.
pub fn trace_stats(traces: &[Trace]) -> Result<TraceStats> {
    if traces.is_empty() {
        return Err(Error::EmptyInput("no traces"));
    }
    let mut counts: BTreeMap<ToolName, usize> = BTreeMap::new();
    let mut calls_per_trace = BTreeMap::new();
    let mut totals = TokenTotals::default();
    for t in traces {
        for call in t.tool_calls() {
            *counts.entry(call.tool).or_default() += 1;
        }
        *calls_per_trace.entry(t.tool_call_count()).or_default() += 1;
        totals.merge(&TokenTotals::of(t));
    }
    let tool_calls: usize = counts.values().sum();
    let n = traces.len() as f64;
    let tool_usage = counts
        .into_iter()
        .map(|(tool, calls)| {
            let percent = 100.0 * calls as f64 / tool_calls as f64;
            (tool, ToolUsage { calls, percent })
        })
        .collect();
    Ok(TraceStats {
        traces: traces.len(),
        tool_calls,
        mean_tool_calls: tool_calls as f64 / n,
        tool_usage,
        calls_per_trace,
        token_means: TokenMeans {
            input_text: totals.input_text as f64 / n,
            input_visual: totals.input_visual as f64 / n,
            output_text: totals.output_text as f64 / n,
        },
        token_totals: totals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tooling::mock::{mock_registry, ToolFixture};
    use crate::tooling::{Payload, Provenance, RegionPayload, BBox};

    fn frames(n: usize) -> (VideoManifest, Vec<FrameRef>) {
        let m = VideoManifest::uniform(4.0, n, 28, 28);
        let r = m.all_refs();
        (m, r)
    }

    fn round(text: &str, cost: Option<u64>) -> TraceRound {
        let (call, result) = match cost {
            Some(c) => (
                Some(ToolCall::new(ToolName::ImageGrounding, json!({"frame": 0, "label": "x"}), 0)),
                Some(ToolResult::new(
                    Payload::Region(RegionPayload {
                        frame: 0,
                        label: "x".into(),
                        bbox: BBox::new(0, 0, 1, 1),
                    }),
                    c,
                    Provenance::Mock,
                )),
            ),
            None => (None, None),
        };
        TraceRound {
            model_text: text.into(),
            tool_call: call,
            tool_result: result,
            text_tokens_in: 0,
            text_tokens_out: 0,
            visual_tokens_in: 0,
        }
    }

    #[test]
    fn eviction_identity_under_budget() {
        let (_, refs) = frames(2);
        let mut t = Trace::new("", "How many?", refs);
        t.rounds.push(round("abcd", Some(10)));
        let v = evict_to_budget(&t, 10_000).unwrap();
        assert_eq!(v.first_kept, 0);
        assert_eq!(v.estimated_tokens, t.base_cost() + t.rounds[0].context_cost());
    }

    #[test]
    fn eviction_floor() {
        let (_, refs) = frames(2);
        let mut t = Trace::new("", "q", refs);
        assert!(evict_to_budget(&t, t.base_cost()).is_ok());
        assert!(matches!(
            evict_to_budget(&t, t.base_cost() - 1),
            Err(Error::BudgetTooSmall { .. })
        ));
        t.rounds.push(round("a", Some(50)));
        t.rounds.push(round("b", Some(50)));
        let floor = t.base_cost() + t.rounds[1].context_cost() + estimate_text_tokens(EVICTION_STUB);
        assert_eq!(evict_to_budget(&t, floor).unwrap().first_kept, 1);
        assert!(evict_to_budget(&t, floor - 1).is_err());
    }

    #[test]
    fn stats_examples() {
        let (_, refs) = frames(1);
        let mut traces = Vec::new();
        for calls in [1, 2, 2, 2] {
            let mut t = Trace::new("", "q", refs.clone());
            for _ in 0..calls {
                t.rounds.push(round("x", Some(1)));
            }
            traces.push(t);
        }
        let s = trace_stats(&traces).unwrap();
        assert_eq!(s.mean_tool_calls, 1.75);
        assert_eq!(s.tool_usage[&ToolName::ImageGrounding].percent, 100.0);

        let zero = vec![Trace::new("", "q", refs.clone()); 3];
        let s = trace_stats(&zero).unwrap();
        assert_eq!(s.mean_tool_calls, 0.0);
        assert!(s.tool_usage.is_empty());
        assert!(trace_stats(&[]).is_err());
    }

    #[test]
    fn immediate_answer_is_one_round() {
        let (m, refs) = frames(3);
        let model = ScriptedModel::sequence("q", EpisodeMode::Tools, &["Answer: 3"]);
        let reg = mock_registry(ToolFixture::default());
        let t = run_episode(&model, &reg, &Episode::new("q", &m, refs), &EpisodeConfig::default()).unwrap();
        assert_eq!(t.rounds.len(), 1);
        assert_eq!(t.tool_call_count(), 0);
        assert_eq!(t.final_answer.as_deref(), Some("3"));
        assert_eq!(t.terminated_by, Termination::Answer);
    }

    #[test]
    fn tool_errors_become_observations() {
        let (m, refs) = frames(3);
        let call = "```tool\n{\"tool\": \"object_tracking\", \"arguments\": {\"object\": \"cat\"}}\n```";
        let model = ScriptedModel::sequence("q", EpisodeMode::Tools, &[call, "Answer: none"]);
        let reg = mock_registry(ToolFixture::default());
        let t = run_episode(&model, &reg, &Episode::new("q", &m, refs), &EpisodeConfig::default()).unwrap();
        assert_eq!(t.rounds.len(), 2);
        assert!(t.rounds[0].tool_result.as_ref().unwrap().is_error());
        assert_eq!(t.terminated_by, Termination::Answer);
    }

    #[test]
    fn max_rounds_and_parse_failure() {
        let (m, refs) = frames(3);
        let call = "```tool\n{\"tool\": \"depth_estimation\", \"arguments\": {\"frame\": 0}}\n```";
        let model = ScriptedModel::sequence("q", EpisodeMode::Tools, &[call; 5]);
        let reg = mock_registry(ToolFixture::default());
        let cfg = EpisodeConfig {
            max_rounds: 3,
            ..EpisodeConfig::default()
        };
        let t = run_episode(&model, &reg, &Episode::new("q", &m, refs.clone()), &cfg).unwrap();
        assert_eq!(t.rounds.len(), 3);
        assert_eq!(t.terminated_by, Termination::MaxRounds);
        assert_eq!(t.final_answer, None);

        let bad = ScriptedModel::sequence("q", EpisodeMode::Tools, &["```tool\n{oops}\n```"]);
        let t = run_episode(&bad, &reg, &Episode::new("q", &m, refs), &cfg).unwrap();
        assert_eq!(t.terminated_by, Termination::ParseFailure);
    }

    #[test]
    fn budget_below_base_is_an_error() {
        let (m, refs) = frames(3);
        let model = ScriptedModel::sequence("q", EpisodeMode::Tools, &["Answer: 1"]);
        let cfg = EpisodeConfig {
            context_budget: 2,
            ..EpisodeConfig::default()
        };
        let r = run_episode(&model, &ToolRegistry::new(), &Episode::new("q", &m, refs), &cfg);
        assert!(matches!(r, Err(Error::BudgetTooSmall { .. })));
    }
}
