//! Answer scoring: exact and relaxed match for open answers, option-letter
//! accuracy for multiple choice and mean relative accuracy for numbers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::orchestrator::{trace_stats, TokenMeans, ToolUsage, Trace};
use crate::tooling::ToolName;

/// Confidence thresholds `0.50, 0.55, …, 0.95` as exact hundredths.
const MRA_THRESHOLDS_PCT: [u32; 10] = [50, 55, 60, 65, 70, 75, 80, 85, 90, 95];

/// Decimal boundary cases must land exactly on the boundary; binary roundoff
/// in `|p − g| / |g|` would otherwise decide them.
const MRA_GUARD: f64 = 1e-12;

pub fn mra_thresholds() -> Vec<f64> {
    MRA_THRESHOLDS_PCT.iter().map(|&p| f64::from(p) / 100.0).collect()
}

/// Lowercase, trim, collapse whitespace, strip trailing punctuation and drop
/// one leading article.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let mut words: Vec<&str> = lowered.split_whitespace().collect();
    if words.len() > 1 && matches!(words[0], "a" | "an" | "the") {
        words.remove(0);
    }
    let joined = words.join(" ");
    joined
        .trim_end_matches(|c: char| c.is_ascii_punctuation())
        .trim_end()
        .to_string()
}

pub fn em1(pred: &str, gt: &str) -> bool {
    normalize_answer(pred) == normalize_answer(gt)
}

/// Exact match, or either normalized answer appearing in the other as a run
/// of whole words.
pub fn em_r1(pred: &str, gt: &str) -> bool {
    let (p, g) = (normalize_answer(pred), normalize_answer(gt));
    if p == g {
        return true;
    }
    let pw: Vec<&str> = p.split(' ').filter(|w| !w.is_empty()).collect();
    let gw: Vec<&str> = g.split(' ').filter(|w| !w.is_empty()).collect();
    contains_run(&pw, &gw) || contains_run(&gw, &pw)
}

fn contains_run(hay: &[&str], needle: &[&str]) -> bool {
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle)
}

/// First standalone capital letter `A`–`E`, matched by `\b[A-E]\b`.
pub fn extract_option_letter(text: &str) -> Option<char> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"\b[A-E]\b").unwrap());
    re.find(text).and_then(|m| m.as_str().chars().next())
}

pub fn option_match(pred: &str, gt: &str) -> bool {
    match (extract_option_letter(pred), extract_option_letter(gt.trim())) {
        (Some(p), Some(g)) => p == g,
        _ => false,
    }
}

/// Fraction of thresholds `θ` with `|pred − gt| / |gt| < 1 − θ`.
pub fn mra(pred: f64, gt: f64) -> Result<f64> {
    if gt == 0.0 {
        return Err(Error::ZeroGroundTruth);
    }
    if !pred.is_finite() || !gt.is_finite() {
        return Ok(0.0);
    }
    let rel = (pred - gt).abs() / gt.abs();
    let passed = MRA_THRESHOLDS_PCT
        .iter()
        .filter(|&&p| f64::from(100 - p) / 100.0 - rel > MRA_GUARD)
        .count();
    Ok(passed as f64 / MRA_THRESHOLDS_PCT.len() as f64)
}

/// The whole text as a number, else its first decimal literal.
pub fn parse_number(text: &str) -> Option<f64> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let t = text.trim();
    if let Ok(v) = t.parse::<f64>() {
        return v.is_finite().then_some(v);
    }
    let re = RE.get_or_init(|| Regex::new(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?").unwrap());
    re.find(t)
        .and_then(|m| m.as_str().parse::<f64>().ok())
        .filter(|v| v.is_finite())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Open,
    MultipleChoice,
    Numerical,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Open => "open",
            Self::MultipleChoice => "multiple_choice",
            Self::Numerical => "numerical",
        })
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "open" => Ok(Self::Open),
            "multiple_choice" | "mc" => Ok(Self::MultipleChoice),
            "numerical" | "na" => Ok(Self::Numerical),
            other => Err(Error::Parse(format!("unknown task kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GroundTruth {
    Number(f64),
    Text(String),
}

impl GroundTruth {
    pub fn as_text(&self) -> String {
        match self {
            Self::Number(v) => v.to_string(),
            Self::Text(s) => s.clone(),
        }
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            Self::Number(v) => v.is_finite().then_some(*v),
            Self::Text(s) => s.trim().parse::<f64>().ok().filter(|v| v.is_finite()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub prediction: String,
    pub ground_truth: GroundTruth,
    pub kind: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benchmark: Option<String>,
}

impl EvalRecord {
    pub fn validate(&self) -> Result<()> {
        if self.kind == TaskKind::Numerical {
            match self.ground_truth.as_number() {
                None => {
                    return Err(Error::Parse(format!(
                        "record `{}`: numerical ground truth is not a finite number",
                        self.id
                    )))
                }
                Some(0.0) => return Err(Error::ZeroGroundTruth),
                Some(_) => {}
            }
        }
        Ok(())
    }

    /// Per-record score: MRA for numbers, 0/1 otherwise. Open answers use
    /// EM-1 here; EM-R1 is reported separately.
    pub fn score(&self) -> Result<f64> {
        let gt = self.ground_truth.as_text();
        Ok(match self.kind {
            TaskKind::Open => indicator(em1(&self.prediction, &gt)),
            TaskKind::MultipleChoice => indicator(option_match(&self.prediction, &gt)),
            TaskKind::Numerical => {
                let g = self.ground_truth.as_number().ok_or_else(|| {
                    Error::Parse(format!("record `{}`: ground truth is not numeric", self.id))
                })?;
                match parse_number(&self.prediction) {
                    Some(p) => mra(p, g)?,
                    None if g == 0.0 => return Err(Error::ZeroGroundTruth),
                    None => 0.0,
                }
            }
        })
    }
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Fraction of records whose predicted option letter matches.
pub fn mca_accuracy(records: &[EvalRecord]) -> Result<f64> {
    mean(
        records
            .iter()
            .map(|r| indicator(option_match(&r.prediction, &r.ground_truth.as_text()))),
    )
    .ok_or(Error::EmptyInput("no records"))
}

pub fn em1_accuracy(records: &[EvalRecord]) -> Result<f64> {
    mean(records.iter().map(|r| indicator(em1(&r.prediction, &r.ground_truth.as_text()))))
        .ok_or(Error::EmptyInput("no records"))
}

pub fn em_r1_accuracy(records: &[EvalRecord]) -> Result<f64> {
    mean(records.iter().map(|r| indicator(em_r1(&r.prediction, &r.ground_truth.as_text()))))
        .ok_or(Error::EmptyInput("no records"))
}

pub fn mean_mra(records: &[EvalRecord]) -> Result<f64> {
    let scores = records
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.kind = TaskKind::Numerical;
            r.score()
        })
        .collect::<Result<Vec<_>>>()?;
    mean(scores).ok_or(Error::EmptyInput("no records"))
}

pub fn read_records(reader: impl BufRead) -> Result<Vec<EvalRecord>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: EvalRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("record line {}: {e}", n + 1)))?;
        record.validate()?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_records(mut writer: impl Write, records: &[EvalRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut writer, r)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Scores for one benchmark. Absent fields have no records of that kind.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkScores {
    pub records: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub em1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub em_r1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mca: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mra: Option<f64>,
}

impl BenchmarkScores {
    pub fn of(records: &[EvalRecord]) -> Result<Self> {
        let by_kind = |k: TaskKind| -> Vec<EvalRecord> {
            records.iter().filter(|r| r.kind == k).cloned().collect()
        };
        let open = by_kind(TaskKind::Open);
        let mc = by_kind(TaskKind::MultipleChoice);
        let num = by_kind(TaskKind::Numerical);
        Ok(Self {
            records: records.len(),
            em1: em1_accuracy(&open).ok(),
            em_r1: em_r1_accuracy(&open).ok(),
            mca: mca_accuracy(&mc).ok(),
            mra: if num.is_empty() { None } else { Some(mean_mra(&num)?) },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolReport {
    pub traces: usize,
    pub mean_tool_calls: f64,
    pub tool_usage: BTreeMap<ToolName, ToolUsage>,
    pub token_means: TokenMeans,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: usize,
    pub benchmarks: BTreeMap<String, BenchmarkScores>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tools: Option<ToolReport>,
}

pub const DEFAULT_BENCHMARK: &str = "default";

/// Scores records per benchmark and, when traces are given, summarizes tool
/// use and token means. Trace ids must equal record ids as sets.
pub fn report(traces: &[Trace], records: &[EvalRecord]) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(Error::EmptyInput("no records"));
    }
    let mut seen = BTreeSet::new();
    for r in records {
        if !seen.insert(r.id.as_str()) {
            return Err(Error::IdMismatch(format!("duplicate record id `{}`", r.id)));
        }
    }
    let tools = if traces.is_empty() {
        None
    } else {
        let trace_ids: BTreeSet<&str> = traces.iter().map(|t| t.id.as_str()).collect();
        if trace_ids.len() != traces.len() {
            return Err(Error::IdMismatch("duplicate trace id".into()));
        }
        if let Some(id) = seen.symmetric_difference(&trace_ids).next() {
            return Err(Error::IdMismatch(format!("id `{id}` is not in both traces and records")));
        }
        let stats = trace_stats(traces)?;
        Some(ToolReport {
            traces: stats.traces,
            mean_tool_calls: stats.mean_tool_calls,
            tool_usage: stats.tool_usage,
            token_means: stats.token_means,
        })
    };
    let mut groups: BTreeMap<String, Vec<EvalRecord>> = BTreeMap::new();
    for r in records {
        let key = r.benchmark.clone().unwrap_or_else(|| DEFAULT_BENCHMARK.to_string());
        groups.entry(key).or_default().push(r.clone());
    }
    let benchmarks = groups
        .into_iter()
        .map(|(k, rs)| BenchmarkScores::of(&rs).map(|s| (k, s)))
        .collect::<Result<_>>()?;
    Ok(EvalReport {
        records: records.len(),
        benchmarks,
        tools,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, pred: &str, gt: GroundTruth, kind: TaskKind) -> EvalRecord {
        EvalRecord {
            id: id.into(),
            prediction: pred.into(),
            ground_truth: gt,
            kind,
            benchmark: None,
        }
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_answer("  The   Chair. "), "chair");
        assert_eq!(normalize_answer("An apple!?"), "apple");
        assert_eq!(normalize_answer("the"), "the");
        assert!(em1("The chair.", "chair"));
        assert!(!em1("two chairs", "chair"));
    }

    #[test]
    fn relaxed() {
        assert!(em_r1("brown chair", "chair"));
        assert!(em_r1("chair", "the brown chair"));
        assert!(!em_r1("armchair", "chair"));
        assert!(!em_r1("", "chair"));
        assert!(em_r1("", ""));
    }

    #[test]
    fn letters() {
        assert_eq!(extract_option_letter("Answer: B"), Some('B'));
        assert_eq!(extract_option_letter("(C) the red one"), Some('C'));
        assert_eq!(extract_option_letter("no idea"), None);
        assert_eq!(extract_option_letter("F"), None);
        assert!(option_match("Answer: B", "B"));
        assert!(!option_match("none", "B"));
    }

    #[test]
    fn mra_examples() {
        assert_eq!(mra(1.0, 1.0).unwrap(), 1.0);
        assert_eq!(mra(1.2, 1.0).unwrap(), 0.6);
        assert_eq!(mra(2.0, 1.0).unwrap(), 0.0);
        assert!(matches!(mra(1.0, 0.0), Err(Error::ZeroGroundTruth)));
        assert_eq!(mra_thresholds().len(), 10);
    }

    #[test]
    fn numbers() {
        assert_eq!(parse_number(" 3.5 "), Some(3.5));
        assert_eq!(parse_number("about 12 meters"), Some(12.0));
        assert_eq!(parse_number("none"), None);
    }

    #[test]
    fn report_aligns_ids() {
        let records = vec![
            rec("a", "2", GroundTruth::Number(2.0), TaskKind::Numerical),
            rec("b", "Answer: A", GroundTruth::Text("B".into()), TaskKind::MultipleChoice),
        ];
        let r = report(&[], &records).unwrap();
        let s = &r.benchmarks[DEFAULT_BENCHMARK];
        assert_eq!(s.mra, Some(1.0));
        assert_eq!(s.mca, Some(0.0));
        assert_eq!(s.em1, None);
        let t = Trace::new("zzz", "q", Vec::new());
        assert!(matches!(report(&[t], &records), Err(Error::IdMismatch(_))));
        assert!(report(&[], &[]).is_err());
    }

    #[test]
    fn ndjson_round_trip() {
        let records = vec![
            rec("a", "1.5", GroundTruth::Number(1.5), TaskKind::Numerical),
            rec("b", "chair", GroundTruth::Text("chair".into()), TaskKind::Open),
        ];
        let mut buf = Vec::new();
        write_records(&mut buf, &records).unwrap();
        assert_eq!(read_records(buf.as_slice()).unwrap(), records);
        let bad = br#"{"id":"x","prediction":"1","ground_truth":"abc","kind":"numerical"}"#;
        assert!(read_records(&bad[..]).is_err());
    }
}
