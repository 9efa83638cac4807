mod common;

use proptest::prelude::*;
use serde_json::json;

use common::*;
use spacetime::ingestion::VideoManifest;
use spacetime::orchestrator::{
    estimate_text_tokens, evict_to_budget, run_episode, trace_stats, Episode, EpisodeConfig, EpisodeMode,
    ScriptedModel, Termination, Trace, TraceRound, EVICTION_STUB,
};
use spacetime::tooling::mock::{mock_registry, ToolFixture};
use spacetime::tooling::{Payload, Provenance, RegionPayload, BBox, ToolCall, ToolName, ToolResult};
use spacetime::Error;

const FS_CALL: &str = "```tool\n{\"tool\": \"frame_selection\", \"arguments\": {\"query\": \"sofa\"}}\n```";
const OT_CALL: &str = "```tool\n{\"tool\": \"object_tracking\", \"arguments\": {\"object\": \"sofa\"}}\n```";

#[test]
fn sofa_episode_shape() {
    let fx = SofaFixture::load();
    let t = fx.run();
    assert_eq!(t.terminated_by, Termination::Answer);
    assert_eq!(t.rounds.len(), 3);
    assert_eq!(t.initial_frames.len(), 16);
    let selected = t.rounds[0].tool_result.as_ref().unwrap();
    let Payload::FrameSet(fs) = &selected.payload else { panic!("{selected:?}") };
    assert_eq!(fs.frames.len(), 8);
    let tracked = t.rounds[1].tool_result.as_ref().unwrap();
    let Payload::Annotated(ot) = &tracked.payload else { panic!("{tracked:?}") };
    // tracking sees exactly the frames picked by selection
    assert_eq!(ot.frames, fs.frames);
    let ids: std::collections::BTreeSet<u32> = ot.annotations.iter().map(|a| a.object_id).collect();
    assert_eq!(ids.into_iter().collect::<Vec<_>>(), vec![0, 1]);
    for r in &t.rounds {
        assert_eq!(r.tool_call.is_some(), r.tool_result.is_some());
    }
    assert_eq!(Trace::from_json(&t.to_json().unwrap()).unwrap(), t);
}

#[test]
fn single_turn_suppresses_second_call() {
    let fx = SofaFixture::load();
    let frames = fx.manifest.frame_refs(&[0, 8, 16, 24]).unwrap();
    let episode = Episode::new(SOFA_QUESTION, &fx.manifest, frames).with_embeddings(&fx.embeddings);
    let registry = fx.scenario.registry();
    let script = [FS_CALL, OT_CALL, "Answer: 2"];

    let single = EpisodeConfig {
        single_turn: true,
        ..EpisodeConfig::default()
    };
    let model = ScriptedModel::sequence(SOFA_QUESTION, EpisodeMode::Tools, &script);
    let a = run_episode(&model, &registry, &episode, &single).unwrap();
    assert_eq!(a.rounds.len(), 3);
    assert_eq!(a.tool_call_count(), 1);
    assert!(a.rounds[1].tool_call.is_none() && a.rounds[1].tool_result.is_none());
    assert_eq!(a.final_answer.as_deref(), Some("2"));

    // same scenario in multi-turn mode for comparison
    let model = ScriptedModel::sequence(SOFA_QUESTION, EpisodeMode::Tools, &script);
    let b = run_episode(&model, &registry, &episode, &EpisodeConfig::default()).unwrap();
    assert_eq!(b.tool_call_count(), 2);
    assert_eq!(a.rounds[0].tool_call, b.rounds[0].tool_call);
    assert_eq!(a.rounds[0].tool_result, b.rounds[0].tool_result);
    // the single-turn prompt carries one extra line of instructions
    assert!(a.rounds[0].text_tokens_in > b.rounds[0].text_tokens_in);
    assert!(b.rounds[1].tool_call.is_some());
}

#[test]
fn frame_selection_then_answer_replays() {
    let fx = SofaFixture::load();
    let frames = fx.manifest.frame_refs(&[0, 10, 20, 30]).unwrap();
    let episode = Episode::new(SOFA_QUESTION, &fx.manifest, frames).with_embeddings(&fx.embeddings);
    let run = || {
        let model = ScriptedModel::sequence(SOFA_QUESTION, EpisodeMode::Tools, &[FS_CALL, "Answer: 2"]);
        run_episode(&model, &fx.scenario.registry(), &episode, &EpisodeConfig::default())
            .unwrap()
            .to_json()
            .unwrap()
    };
    let first = run();
    assert_eq!(first, run());
    let t = Trace::from_json(&first).unwrap();
    assert_eq!(t.rounds.len(), 2);
    assert_eq!(t.tool_call_count(), 1);
}

#[test]
fn decoding_passes_through_untouched() {
    let cfg = EpisodeConfig::default();
    assert_eq!(
        serde_json::Value::Object(cfg.decoding.clone()),
        json!({"temperature": 0.0, "top_k": 1, "top_p": 0.001})
    );
}

#[test]
fn stats_match_hand_summation() {
    let manifest = VideoManifest::uniform(4.0, 4, 28, 28);
    let mut traces = Vec::new();
    let layout: [&[ToolName]; 4] = [
        &[ToolName::ObjectTracking],
        &[ToolName::FrameSelection, ToolName::ObjectTracking],
        &[],
        &[ToolName::Zoom, ToolName::ObjectTracking, ToolName::DepthEstimation],
    ];
    for (i, calls) in layout.iter().enumerate() {
        let mut t = Trace::new(format!("t{i}"), "q", manifest.all_refs());
        for (j, &tool) in calls.iter().enumerate() {
            t.rounds.push(TraceRound {
                model_text: String::new(),
                tool_call: Some(ToolCall::new(tool, json!({}), j)),
                tool_result: Some(ToolResult::error("x")),
                text_tokens_in: 10 * (i as u64 + 1),
                text_tokens_out: 3,
                visual_tokens_in: 100,
            });
        }
        traces.push(t);
    }
    let s = trace_stats(&traces).unwrap();
    assert_eq!(s.tool_calls, 6);
    assert_eq!(s.mean_tool_calls, 1.5);
    assert_eq!(s.tool_usage[&ToolName::ObjectTracking].calls, 3);
    assert_eq!(s.tool_usage[&ToolName::ObjectTracking].percent, 50.0);
    assert_eq!(s.calls_per_trace[&0], 1);
    assert_eq!(s.calls_per_trace[&1], 1);
    // input text: 10*1 + 20*2 + 0 + 40*3
    assert_eq!(s.token_totals.input_text, 170);
    assert_eq!(s.token_means.input_visual, 600.0 / 4.0);
}

#[test]
fn budget_exhaustion_ends_the_episode() {
    let manifest = VideoManifest::uniform(4.0, 4, 28, 28);
    let mut fx = ToolFixture::default();
    fx.insert(
        ToolName::DepthEstimation,
        "0",
        json!({"width": 1, "height": 1, "values": [1.0]}),
    );
    let call = "```tool\n{\"tool\": \"depth_estimation\", \"arguments\": {\"frame\": 0}}\n```";
    let model = ScriptedModel::sequence("q", EpisodeMode::Tools, &[call; 8]);
    let episode = Episode::new("q", &manifest, manifest.all_refs());
    let cfg = EpisodeConfig {
        context_budget: 4 * 4 + 1 + 10,
        ..EpisodeConfig::default()
    };
    let t = run_episode(&model, &mock_registry(fx), &episode, &cfg).unwrap();
    assert_eq!(t.terminated_by, Termination::BudgetExhausted);
    assert!(!t.rounds.is_empty());
}

#[test]
fn empty_frames_rejected() {
    let manifest = VideoManifest::uniform(4.0, 4, 28, 28);
    let model = ScriptedModel::sequence("q", EpisodeMode::Tools, &["Answer: 1"]);
    let r = run_episode(&model, &mock_registry(ToolFixture::default()), &Episode::new("q", &manifest, vec![]), &EpisodeConfig::default());
    assert!(matches!(r, Err(Error::EmptyInput(_))));
}

fn costed_round(i: usize, cost: u64) -> TraceRound {
    TraceRound {
        model_text: format!("thought {i}"),
        tool_call: Some(ToolCall::new(ToolName::ImageGrounding, json!({"frame": 0, "label": "x"}), i)),
        tool_result: Some(ToolResult::new(
            Payload::Region(RegionPayload {
                frame: 0,
                label: "x".into(),
                bbox: BBox::new(0, 0, 1, 1),
            }),
            cost,
            Provenance::Mock,
        )),
        text_tokens_in: 0,
        text_tokens_out: 0,
        visual_tokens_in: 0,
    }
}

proptest! {
    #[test]
    fn eviction_fits_and_keeps_the_latest_round(
        costs in prop::collection::vec(0u64..500, 0..10),
        budget in 0u64..3000,
    ) {
        let manifest = VideoManifest::uniform(4.0, 3, 28, 28);
        let mut t = Trace::new("", "How many sofas?", manifest.all_refs());
        for (i, &c) in costs.iter().enumerate() {
            t.rounds.push(costed_round(i, c));
        }
        let round_cost: Vec<u64> = t.rounds.iter().map(TraceRound::context_cost).collect();
        let base = t.base_cost();
        let stub = estimate_text_tokens(EVICTION_STUB);
        match evict_to_budget(&t, budget) {
            Ok(v) => {
                prop_assert!(v.estimated_tokens <= budget);
                prop_assert!(v.first_kept < t.rounds.len().max(1));
                // oracle: the smallest prefix whose removal fits
                let sum_from = |k: usize| base + round_cost[k..].iter().sum::<u64>() + if k > 0 { stub } else { 0 };
                let oracle = (0..=t.rounds.len().saturating_sub(1)).find(|&k| sum_from(k) <= budget).unwrap();
                prop_assert_eq!(v.first_kept, oracle);
                prop_assert_eq!(v.estimated_tokens, sum_from(oracle));
            }
            Err(Error::BudgetTooSmall { floor, .. }) => {
                prop_assert!(floor > budget);
            }
            Err(e) => prop_assert!(false, "{e}"),
        }
    }
}
