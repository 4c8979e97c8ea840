//! Scoring of prediction logs against benchmark manifests.
//!
//! NFS: a letter answer is correct iff it equals the answer key; a score
//! vector is correct iff the ground-truth option scores strictly higher than
//! every distractor (ties lose). TCV: `yes` means "a corrupted frame is
//! present". Missing and unparseable answers count as wrong, so accuracy is
//! always `correct / items` per run.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::benchgen::{NfsItem, TcvItem, TcvLabel, OPTION_LETTERS};

pub const TCV_CONVENTION: &str =
    "TCV answers: \"yes\" = a corrupted/incoherent frame is present, \"no\" = the sequence is coherent";

/// z for a two-sided 95% normal interval.
const Z95: f64 = 1.96;

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("prediction log line {line}: {msg}")]
    MalformedLog { line: usize, msg: String },
    #[error("ambiguous log: item `{id}` has more than one prediction in run `{run}`")]
    AmbiguousLog { id: String, run: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ScoreError {
    pub fn line(&self) -> Option<usize> {
        match self {
            ScoreError::MalformedLog { line, .. } => Some(*line),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Answer {
    /// Raw answer token: `A`-`D`, `yes`/`no`, or anything else (parse failure).
    Token(String),
    /// Per-option scores.
    Scores(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub id: String,
    pub run: String,
    pub answer: Answer,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RunId {
    Int(i64),
    Str(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPrediction {
    id: String,
    #[serde(default)]
    run: Option<RunId>,
    #[serde(default)]
    answer: Option<String>,
    #[serde(default)]
    scores: Option<Vec<f64>>,
}

/// Parse a record-per-line prediction log. Blank lines are ignored; a line
/// that is not valid JSON, or has neither/both of `answer` and `scores`, is
/// malformed.
pub fn parse_prediction_log<R: BufRead>(r: R) -> Result<Vec<PredictionRecord>, ScoreError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| ScoreError::MalformedLog { line: i + 1, msg };
        let raw: RawPrediction = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let answer = match (raw.answer, raw.scores) {
            (Some(a), None) => Answer::Token(a),
            (None, Some(s)) => Answer::Scores(s),
            (Some(_), Some(_)) => return Err(bad("record has both `answer` and `scores`".into())),
            (None, None) => return Err(bad("record has neither `answer` nor `scores`".into())),
        };
        let run = match raw.run {
            None => "0".to_string(),
            Some(RunId::Int(n)) => n.to_string(),
            Some(RunId::Str(s)) => s,
        };
        out.push(PredictionRecord { id: raw.id, run, answer });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalKind {
    Normal95,
    None,
}

/// Mean of per-run accuracies and the half-width of its interval:
/// `1.96 * sd / sqrt(n)` with the sample standard deviation, `0` for one run.
pub fn aggregate_runs(per_run: &[f64], kind: IntervalKind) -> (f64, f64) {
    let n = per_run.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = per_run.iter().sum::<f64>() / n as f64;
    if n == 1 || kind == IntervalKind::None {
        return (mean, 0.0);
    }
    let var = per_run.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, Z95 * var.sqrt() / (n as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunScore {
    pub run: String,
    pub correct: usize,
    pub total: usize,
    pub missing: usize,
    pub parse_failures: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrideScore {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub task: String,
    pub convention: String,
    /// Items in the manifest.
    pub items: usize,
    /// Pooled over runs.
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    pub missing: usize,
    pub parse_failures: usize,
    /// Predictions naming items absent from the manifest.
    pub ignored_unknown: usize,
    pub per_stride: BTreeMap<usize, StrideScore>,
    pub runs: Vec<RunScore>,
    pub mean: f64,
    pub half_width: f64,
    pub interval: IntervalKind,
}

impl ScoreReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "task: {}", self.task);
        if self.task == "tcv" {
            let _ = writeln!(s, "{}", self.convention);
        }
        let _ = writeln!(s, "items: {}  runs: {}", self.items, self.runs.len());
        let _ = writeln!(s, "{:<12} {:>8} {:>8} {:>9}", "slice", "correct", "total", "accuracy");
        let _ = writeln!(s, "{:<12} {:>8} {:>8} {:>9.4}", "overall", self.correct, self.total, self.accuracy);
        for (stride, sc) in &self.per_stride {
            let _ = writeln!(s, "{:<12} {:>8} {:>8} {:>9.4}", format!("stride {stride}"), sc.correct, sc.total, sc.accuracy);
        }
        for r in &self.runs {
            let _ = writeln!(s, "{:<12} {:>8} {:>8} {:>9.4}", format!("run {}", r.run), r.correct, r.total, r.accuracy);
        }
        match self.interval {
            IntervalKind::Normal95 => {
                let _ = writeln!(s, "mean over runs: {:.4} +/- {:.4} (95% normal)", self.mean, self.half_width);
            }
            IntervalKind::None => {
                let _ = writeln!(s, "mean over runs: {:.4}", self.mean);
            }
        }
        let _ = writeln!(
            s,
            "missing: {}  parse failures: {}  unknown ids ignored: {}",
            self.missing, self.parse_failures, self.ignored_unknown
        );
        s
    }
}

enum Outcome {
    Correct,
    Wrong,
    ParseFailure,
}

fn ratio(c: usize, t: usize) -> f64 {
    if t == 0 {
        0.0
    } else {
        c as f64 / t as f64
    }
}

/// Shared scoring loop. `judge` maps (item index, answer) to an outcome.
fn score_generic(
    task: &str,
    ids: &[&str],
    strides: &[usize],
    predictions: &[PredictionRecord],
    kind: IntervalKind,
    judge: impl Fn(usize, &Answer) -> Outcome,
) -> Result<ScoreReport, ScoreError> {
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let mut seen = HashSet::new();
    let mut runs: BTreeSet<&str> = BTreeSet::new();
    let mut by_run: HashMap<&str, Vec<Option<&Answer>>> = HashMap::new();
    let mut ignored_unknown = 0;
    for p in predictions {
        if !seen.insert((p.id.as_str(), p.run.as_str())) {
            return Err(ScoreError::AmbiguousLog {
                id: p.id.clone(),
                run: p.run.clone(),
            });
        }
        runs.insert(&p.run);
        let Some(&i) = index.get(p.id.as_str()) else {
            ignored_unknown += 1;
            continue;
        };
        by_run.entry(&p.run).or_insert_with(|| vec![None; ids.len()])[i] = Some(&p.answer);
    }
    if runs.is_empty() {
        runs.insert("0");
    }

    let mut per_stride: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for &s in strides {
        per_stride.entry(s).or_default();
    }
    let mut run_scores = Vec::new();
    for run in runs {
        let answers = by_run.get(run);
        let (mut correct, mut missing, mut parse_failures) = (0, 0, 0);
        for i in 0..ids.len() {
            let entry = per_stride.entry(strides[i]).or_default();
            entry.1 += 1;
            match answers.and_then(|a| a[i]) {
                None => missing += 1,
                Some(a) => match judge(i, a) {
                    Outcome::Correct => {
                        correct += 1;
                        entry.0 += 1;
                    }
                    Outcome::Wrong => {}
                    Outcome::ParseFailure => parse_failures += 1,
                },
            }
        }
        run_scores.push(RunScore {
            run: run.to_string(),
            correct,
            total: ids.len(),
            missing,
            parse_failures,
            accuracy: ratio(correct, ids.len()),
        });
    }
    let accs: Vec<f64> = run_scores.iter().map(|r| r.accuracy).collect();
    let (mean, half_width) = aggregate_runs(&accs, kind);
    let correct = run_scores.iter().map(|r| r.correct).sum();
    let total = run_scores.iter().map(|r| r.total).sum();
    Ok(ScoreReport {
        task: task.to_string(),
        convention: TCV_CONVENTION.to_string(),
        items: ids.len(),
        correct,
        total,
        accuracy: ratio(correct, total),
        missing: run_scores.iter().map(|r| r.missing).sum(),
        parse_failures: run_scores.iter().map(|r| r.parse_failures).sum(),
        ignored_unknown,
        per_stride: per_stride
            .into_iter()
            .map(|(s, (c, t))| {
                (
                    s,
                    StrideScore {
                        correct: c,
                        total: t,
                        accuracy: ratio(c, t),
                    },
                )
            })
            .collect(),
        runs: run_scores,
        mean,
        half_width,
        interval: kind,
    })
}

pub fn score_nfs(
    manifest: &[NfsItem],
    predictions: &[PredictionRecord],
    kind: IntervalKind,
) -> Result<ScoreReport, ScoreError> {
    let ids: Vec<&str> = manifest.iter().map(|i| i.id.as_str()).collect();
    let strides: Vec<usize> = manifest.iter().map(|i| i.stride).collect();
    score_generic("nfs", &ids, &strides, predictions, kind, |i, answer| {
        let item = &manifest[i];
        let Some(key) = item.answer_index() else {
            return Outcome::ParseFailure;
        };
        match answer {
            Answer::Token(t) => match OPTION_LETTERS.iter().position(|l| l.eq_ignore_ascii_case(t.trim())) {
                Some(k) if k < item.options.len() => {
                    if k == key {
                        Outcome::Correct
                    } else {
                        Outcome::Wrong
                    }
                }
                _ => Outcome::ParseFailure,
            },
            Answer::Scores(s) => {
                if s.len() != item.options.len() || s.iter().any(|x| x.is_nan()) {
                    return Outcome::ParseFailure;
                }
                let gt = s[key];
                let best_other = s
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != key)
                    .map(|(_, &x)| x)
                    .fold(f64::NEG_INFINITY, f64::max);
                if gt > best_other {
                    Outcome::Correct
                } else {
                    Outcome::Wrong
                }
            }
        }
    })
}

fn parse_yes_no(t: &str) -> Option<bool> {
    match t.trim().to_ascii_lowercase().as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

/// TCV scoring. Score vectors, when given, are `[s_yes, s_no]` and judged by
/// strict argmax.
pub fn score_tcv(
    manifest: &[TcvItem],
    predictions: &[PredictionRecord],
    kind: IntervalKind,
) -> Result<ScoreReport, ScoreError> {
    let ids: Vec<&str> = manifest.iter().map(|i| i.id.as_str()).collect();
    let strides: Vec<usize> = manifest.iter().map(|i| i.stride).collect();
    score_generic("tcv", &ids, &strides, predictions, kind, |i, answer| {
        let corrupted = manifest[i].label == TcvLabel::Corrupted;
        let said_yes = match answer {
            Answer::Token(t) => parse_yes_no(t),
            Answer::Scores(s) if s.len() == 2 && !s.iter().any(|x| x.is_nan()) => {
                if s[0] > s[1] {
                    Some(true)
                } else if s[1] > s[0] {
                    Some(false)
                } else {
                    // a tie picks neither answer
                    return Outcome::Wrong;
                }
            }
            Answer::Scores(_) => None,
        };
        match said_yes {
            None => Outcome::ParseFailure,
            Some(y) if y == corrupted => Outcome::Correct,
            Some(_) => Outcome::Wrong,
        }
    })
}
