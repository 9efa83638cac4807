use std::collections::BTreeMap;

use proptest::prelude::*;
use serde_json::json;

use spacetime::curation::{
    curate_corpus, export_training_records, import_training_records, CorpusStats, CurationConfig, Dataset,
    Discarded, MediaType, Outcome, SampleKind, SourceSample, TrainingSample, Verdict,
};
use spacetime::ingestion::VideoManifest;
use spacetime::orchestrator::{ScriptEntry, ScriptedModel, Trace, TraceRound};
use spacetime::tooling::mock::{mock_registry, ToolFixture};
use spacetime::tooling::{ToolCall, ToolName, ToolResult};
use spacetime::Error;

const DEPTH: &str = "```tool\n{\"tool\": \"depth_estimation\", \"arguments\": {\"frame\": 0}}\n```";

fn registry() -> spacetime::ToolRegistry {
    let mut fx = ToolFixture::default();
    fx.insert(ToolName::DepthEstimation, "0", json!({"width": 1, "height": 1, "values": [0.75]}));
    mock_registry(fx)
}

/// `plan[i]` is `None` for a text-stage pass, `Some(n)` for a tool-stage pass
/// after `n` calls, `Some(usize::MAX)` for a double failure.
fn corpus(plan: &[Option<usize>]) -> (ScriptedModel, Vec<SourceSample>) {
    let mut script = BTreeMap::new();
    let mut samples = Vec::new();
    for (i, p) in plan.iter().enumerate() {
        let id = format!("q{i}");
        let entry = match *p {
            None => ScriptEntry {
                text_cot: vec!["Answer: B".into()],
                tools: vec![],
            },
            Some(usize::MAX) => ScriptEntry {
                text_cot: vec!["Answer: A".into()],
                tools: vec![DEPTH.into(), "Answer: C".into()],
            },
            Some(n) => {
                let mut tools = vec![DEPTH.to_string(); n];
                tools.push("The depth map settles it.\nAnswer: B".into());
                ScriptEntry {
                    text_cot: vec!["Answer: A".into()],
                    tools,
                }
            }
        };
        script.insert(id.clone(), entry);
        let manifest = VideoManifest::uniform(24.0, 48, 320, 240);
        samples.push(SourceSample::new(id, "Which object is closest?", "B", manifest, ["vsi", "ego"][i % 2]).unwrap());
    }
    (ScriptedModel::new(script), samples)
}

#[test]
fn ten_sample_fixture() {
    let plan = [None, Some(1), None, Some(2), Some(usize::MAX), Some(1), None, Some(3), None, Some(1)];
    let (model, samples) = corpus(&plan);
    let (dataset, stats) = curate_corpus(&model, &registry(), &samples, &CurationConfig::default(), 3).unwrap();
    assert_eq!(
        (stats.counts.text_cot, stats.counts.visual_trajectory, stats.counts.discard),
        (4, 5, 1)
    );
    assert_eq!(stats.visual_tool_calls, 1 + 2 + 1 + 3 + 1);
    assert_eq!(stats.per_source["vsi"].text_cot, 4);
    assert_eq!(stats.summary().discard_rate, 0.1);
    assert_eq!(dataset.discards[0].id, "q4");
    for s in &dataset.samples {
        s.validate().unwrap();
        assert_eq!(s.verdict, Verdict::Correct);
        assert_eq!(s.trace.final_answer.as_deref(), Some("B"));
    }
}

#[test]
fn mean_over_visual_trajectories() {
    let (model, samples) = corpus(&[Some(1), Some(2), Some(2), None]);
    let (_, stats) = curate_corpus(&model, &registry(), &samples, &CurationConfig::default(), 2).unwrap();
    let mean = stats.mean_tool_calls().unwrap();
    assert!((mean - 5.0 / 3.0).abs() < 1e-12);
    assert_eq!(format!("{mean:.3}"), "1.667");
}

#[test]
fn all_text_corpus_has_no_mean() {
    let (model, samples) = corpus(&[None, None]);
    let (_, stats) = curate_corpus(&model, &registry(), &samples, &CurationConfig::default(), 1).unwrap();
    let s = stats.summary();
    assert_eq!(s.counts.visual_trajectory, 0);
    assert!(!s.mean_tool_calls_defined);
    assert_eq!(s.mean_tool_calls, 0.0);
}

#[test]
fn empty_corpus_is_an_error() {
    let model = ScriptedModel::default();
    assert!(matches!(
        curate_corpus(&model, &registry(), &[], &CurationConfig::default(), 1),
        Err(Error::EmptyInput(_))
    ));
}

#[test]
fn worker_count_does_not_change_results() {
    let plan: Vec<Option<usize>> = (0..12).map(|i| if i % 3 == 0 { None } else { Some(i % 4) }).collect();
    let run = |w| {
        let (model, samples) = corpus(&plan);
        curate_corpus(&model, &registry(), &samples, &CurationConfig::default(), w).unwrap()
    };
    assert_eq!(run(1), run(8));
}

#[test]
fn file_round_trip_preserves_visual_references() {
    let (model, samples) = corpus(&[Some(2), None, Some(usize::MAX)]);
    let (dataset, stats) = curate_corpus(&model, &registry(), &samples, &CurationConfig::default(), 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dataset.ndjson");
    export_training_records(&path, &dataset).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 + 1);
    for f in &samples[0].manifest.frames[..1] {
        assert!(text.contains(&f.uri));
    }
    let back = import_training_records(&path).unwrap();
    assert_eq!(back, dataset);
    assert_eq!(CorpusStats::from_dataset(&back), stats);
}

fn fake_sample(i: usize, calls: usize, source: &str) -> Outcome {
    let mut trace = Trace::new(format!("x{i}"), "q", vec![]);
    for r in 0..calls {
        trace.rounds.push(TraceRound {
            model_text: String::new(),
            tool_call: Some(ToolCall::new(ToolName::Zoom, json!({}), r)),
            tool_result: Some(ToolResult::error("e")),
            text_tokens_in: 0,
            text_tokens_out: 0,
            visual_tokens_in: 0,
        });
    }
    let s = TrainingSample {
        id: format!("x{i}"),
        kind: if calls == 0 { SampleKind::TextCot } else { SampleKind::VisualTrajectory },
        source: source.into(),
        media: MediaType::Video,
        verdict: Verdict::Correct,
        trace,
    };
    if calls == 0 {
        Outcome::TextCot(s)
    } else {
        Outcome::VisualTraj(s)
    }
}

fn outcome(code: (u8, usize, u8)) -> Outcome {
    let (kind, calls, src) = code;
    let source = ["a", "b", "c"][src as usize % 3];
    match kind % 3 {
        0 => fake_sample(calls, 0, source),
        1 => fake_sample(calls, calls.max(1), source),
        _ => Outcome::Discard(Discarded {
            id: "d".into(),
            source: source.into(),
            reason: "wrong".into(),
        }),
    }
}

proptest! {
    #[test]
    fn stats_merge_is_associative_and_order_free(codes in prop::collection::vec((0u8..3, 0usize..4, 0u8..3), 0..30), split in 0usize..30) {
        let outcomes: Vec<Outcome> = codes.into_iter().map(outcome).collect();
        let split = split.min(outcomes.len());
        let all = outcomes.iter().map(CorpusStats::of_outcome).fold(CorpusStats::default(), CorpusStats::merge);
        let left = outcomes[..split].iter().map(CorpusStats::of_outcome).fold(CorpusStats::default(), CorpusStats::merge);
        let right = outcomes[split..].iter().map(CorpusStats::of_outcome).fold(CorpusStats::default(), CorpusStats::merge);
        prop_assert_eq!(&left.clone().merge(right.clone()), &all);
        prop_assert_eq!(&right.merge(left), &all);
        let dataset = Dataset::from_outcomes(outcomes);
        prop_assert_eq!(CorpusStats::from_dataset(&dataset), all);
        for s in &dataset.samples {
            prop_assert!(s.validate().is_ok());
        }
    }
}
