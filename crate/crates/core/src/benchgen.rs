//! Next-frame-selection (NFS) and temporal-coherence (TCV) item construction.
//!
//! A frame sequence is cut into fixed-length intervals whose start indices are
//! `stride` apart. For each interval the ground-truth frame is the one right
//! after it. Distractor candidates are all frames outside the interval widened
//! by a temporal buffer; candidates too similar to the ground truth
//! (`sim >= tau`) are pruned. NFS items mix the ground truth with three pruned
//! distractors; corrupted TCV items replace one frame of the interval with a
//! pruned distractor.
//!
//! Frame indices are 1-based throughout, matching frame file names.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;
use std::sync::Arc;

use image::RgbImage;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl::write_jsonl_file;
use crate::seed::{derive_seed, rng_from_seed};
use crate::similarity::{features_similarity, SimilarityError, SimilarityMetric};

pub const NFS_DISTRACTORS: usize = 3;
pub const OPTION_LETTERS: [&str; 4] = ["A", "B", "C", "D"];

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("sequence too short: {frames} frames cannot hold a {context}-frame interval plus its successor")]
    SequenceTooShort { frames: usize, context: usize },
    #[error("invalid frame sequence `{video}`: {msg}")]
    InvalidSequence { video: String, msg: String },
    #[error("invalid benchmark config: {0}")]
    InvalidConfig(String),
    #[error("no input sequences")]
    NoSequences,
    #[error("benchmark is empty: every candidate item was skipped ({skipped} skips)")]
    EmptyBenchmark { skipped: usize },
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameSource {
    Simulated,
    Ingested,
}

#[derive(Debug, Clone)]
pub struct Frame {
    /// 1-based
    pub index: usize,
    /// seconds
    pub timestamp: f64,
    /// `<video>/<NNNN>`, the key used by external embedding tables
    pub id: String,
    /// Path relative to the output root, as written into manifests.
    pub path: String,
    pub image: Arc<RgbImage>,
}

#[derive(Debug, Clone)]
pub struct FrameSequence {
    video_id: String,
    source: FrameSource,
    frames: Vec<Frame>,
}

impl FrameSequence {
    pub fn new(video_id: impl Into<String>, source: FrameSource, frames: Vec<Frame>) -> Result<Self, BenchError> {
        let video_id = video_id.into();
        let bad = |msg: String| BenchError::InvalidSequence {
            video: video_id.clone(),
            msg,
        };
        if frames.len() < 2 {
            return Err(bad(format!("needs at least 2 frames, got {}", frames.len())));
        }
        let dims = frames[0].image.dimensions();
        for (i, f) in frames.iter().enumerate() {
            if f.index != i + 1 {
                return Err(bad(format!("frame {} carries index {}", i + 1, f.index)));
            }
            if f.image.dimensions() != dims {
                return Err(bad(format!("frame {} has a different resolution", f.index)));
            }
            if i > 0 && !(f.timestamp > frames[i - 1].timestamp) {
                return Err(bad(format!("timestamps not strictly increasing at frame {}", f.index)));
            }
        }
        Ok(Self {
            video_id,
            source,
            frames,
        })
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn source(&self) -> FrameSource {
        self.source
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Frame by 1-based index.
    pub fn frame(&self, index: usize) -> &Frame {
        &self.frames[index - 1]
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn path(&self, index: usize) -> &str {
        &self.frame(index).path
    }
}

/// Inclusive range of 1-based frame indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interval {
    pub start: usize,
    pub end: usize,
}

impl Interval {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(1 <= start && start <= end);
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index of the ground-truth successor frame.
    pub fn gt(&self) -> usize {
        self.end + 1
    }

    pub fn indices(&self) -> std::ops::RangeInclusive<usize> {
        self.start..=self.end
    }
}

/// Intervals of length `len` starting at `1, 1+stride, ...` while the
/// successor frame still exists.
pub fn partition_intervals(frames: usize, len: usize, stride: usize) -> Result<Vec<Interval>, BenchError> {
    if len == 0 || stride == 0 {
        return Err(BenchError::InvalidConfig("context length and stride must be >= 1".into()));
    }
    if frames < len + 1 {
        return Err(BenchError::SequenceTooShort {
            frames,
            context: len,
        });
    }
    Ok((1..)
        .step_by(stride)
        .map(|start| Interval::new(start, start + len - 1))
        .take_while(|iv| iv.gt() <= frames)
        .collect())
}

/// Frames outside `[max(1, start - buffer), min(end + buffer, frames)]`.
pub fn distractor_candidates(interval: Interval, frames: usize, buffer: usize) -> Vec<usize> {
    let lo = interval.start.saturating_sub(buffer).max(1);
    let hi = (interval.end + buffer).min(frames);
    (1..=frames).filter(|&t| t < lo || t > hi).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub index: usize,
    pub sim: f64,
}

/// Keep the candidates whose similarity to the ground truth is strictly below
/// `tau`.
pub fn prune_by_similarity(
    candidates: &[usize],
    tau: f64,
    sim_to_gt: impl Fn(usize) -> f64,
) -> Vec<ScoredCandidate> {
    candidates
        .iter()
        .map(|&index| ScoredCandidate {
            index,
            sim: sim_to_gt(index),
        })
        .filter(|c| c.sim < tau)
        .collect()
}

/// Per-frame similarity features for one sequence.
pub struct SequenceSimilarity {
    features: Vec<Option<Vec<f64>>>,
}

impl SequenceSimilarity {
    pub fn new(seq: &FrameSequence, metric: &SimilarityMetric) -> Result<Self, SimilarityError> {
        let features = metric.features(seq.frames.iter().map(|f| (f.id.as_str(), f.image.as_ref())))?;
        Ok(Self { features })
    }

    /// Similarity between two frames by 1-based index.
    pub fn sim(&self, a: usize, b: usize) -> f64 {
        features_similarity(self.features[a - 1].as_deref(), self.features[b - 1].as_deref())
    }
}

/// Candidate and pruned distractor indices for one interval.
#[derive(Debug, Clone, PartialEq)]
pub struct DistractorSet {
    pub interval: Interval,
    pub buffer: usize,
    pub tau: f64,
    pub candidates: Vec<usize>,
    /// Pruned candidates, ground-truth frame removed.
    pub pruned: Vec<ScoredCandidate>,
}

pub fn distractor_set(
    frames: usize,
    sims: &SequenceSimilarity,
    interval: Interval,
    buffer: usize,
    tau: f64,
) -> DistractorSet {
    let candidates = distractor_candidates(interval, frames, buffer);
    let gt = interval.gt();
    let mut pruned = prune_by_similarity(&candidates, tau, |t| sims.sim(t, gt));
    // with a zero buffer the successor frame itself is a candidate
    pruned.retain(|c| c.index != gt);
    DistractorSet {
        interval,
        buffer,
        tau,
        candidates,
        pruned,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SkipReason {
    SequenceTooShort { frames: usize, context: usize },
    InsufficientDistractors { needed: usize, available: usize },
    ClassBalance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NfsItem {
    pub id: String,
    pub video: String,
    pub stride: usize,
    pub context: Vec<String>,
    pub options: Vec<String>,
    pub answer: String,
    /// Similarity to the ground truth of each distractor, in option order.
    pub distractor_sims: Vec<f64>,
    pub seed: u64,
    pub interval: Interval,
    pub option_indices: Vec<usize>,
}

impl NfsItem {
    pub fn answer_index(&self) -> Option<usize> {
        OPTION_LETTERS.iter().position(|l| *l == self.answer)
    }
}

pub fn build_nfs_item(
    id: String,
    stride: usize,
    interval: Interval,
    seq: &FrameSequence,
    pruned: &[ScoredCandidate],
    seed: u64,
) -> Result<NfsItem, SkipReason> {
    if pruned.len() < NFS_DISTRACTORS {
        return Err(SkipReason::InsufficientDistractors {
            needed: NFS_DISTRACTORS,
            available: pruned.len(),
        });
    }
    let mut rng = rng_from_seed(seed);
    let chosen: Vec<ScoredCandidate> = pruned.choose_multiple(&mut rng, NFS_DISTRACTORS).copied().collect();
    // `None` marks the ground truth
    let mut options: Vec<Option<ScoredCandidate>> = std::iter::once(None).chain(chosen.into_iter().map(Some)).collect();
    options.shuffle(&mut rng);
    let answer = options.iter().position(Option::is_none).expect("gt present");
    let option_indices: Vec<usize> = options.iter().map(|o| o.map_or(interval.gt(), |c| c.index)).collect();
    Ok(NfsItem {
        id,
        video: seq.video_id.clone(),
        stride,
        context: interval.indices().map(|t| seq.path(t).to_string()).collect(),
        options: option_indices.iter().map(|&t| seq.path(t).to_string()).collect(),
        answer: OPTION_LETTERS[answer].to_string(),
        distractor_sims: options.iter().flatten().map(|c| c.sim).collect(),
        seed,
        interval,
        option_indices,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TcvLabel {
    Coherent,
    Corrupted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TcvItem {
    pub id: String,
    pub video: String,
    pub stride: usize,
    pub frames: Vec<String>,
    pub label: TcvLabel,
    /// 0-based position in `frames` of the replaced frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrupt_pos: Option<usize>,
    /// 1-based frame index of the inserted distractor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<usize>,
    /// Similarity of the inserted distractor to the interval's successor frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_sim: Option<f64>,
    pub seed: u64,
    pub interval: Interval,
    pub frame_indices: Vec<usize>,
}

pub fn build_tcv_item(
    id: String,
    stride: usize,
    window: Interval,
    seq: &FrameSequence,
    pruned: &[ScoredCandidate],
    seed: u64,
    corrupt: bool,
) -> Result<TcvItem, SkipReason> {
    let mut frame_indices: Vec<usize> = window.indices().collect();
    let (mut corrupt_pos, mut source, mut source_sim) = (None, None, None);
    if corrupt {
        if pruned.is_empty() {
            return Err(SkipReason::InsufficientDistractors { needed: 1, available: 0 });
        }
        let mut rng = rng_from_seed(seed);
        let pos = rng.random_range(0..frame_indices.len());
        let pick = pruned[rng.random_range(0..pruned.len())];
        frame_indices[pos] = pick.index;
        corrupt_pos = Some(pos);
        source = Some(pick.index);
        source_sim = Some(pick.sim);
    }
    Ok(TcvItem {
        id,
        video: seq.video_id.clone(),
        stride,
        frames: frame_indices.iter().map(|&t| seq.path(t).to_string()).collect(),
        label: if corrupt { TcvLabel::Corrupted } else { TcvLabel::Coherent },
        corrupt_pos,
        source,
        source_sim,
        seed,
        interval: window,
        frame_indices,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TcvBalance {
    /// Exactly half of each stride's windows corrupted (rounded down).
    Exact,
    /// Each window corrupted independently with probability `p`.
    Bernoulli { p: f64 },
}

fn default_context_len() -> usize {
    5
}
fn default_strides() -> Vec<usize> {
    vec![2, 4]
}
fn default_buffer() -> usize {
    3
}
fn default_tau() -> f64 {
    0.85
}
fn default_balance() -> TcvBalance {
    TcvBalance::Exact
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    #[serde(default = "default_context_len")]
    pub context_len: usize,
    #[serde(default = "default_strides")]
    pub strides: Vec<usize>,
    /// Temporal exclusion radius around each interval, frames.
    #[serde(default = "default_buffer")]
    pub buffer: usize,
    /// Similarity threshold; distractors need `sim < tau`.
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_balance")]
    pub tcv_balance: TcvBalance,
    #[serde(default)]
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            context_len: default_context_len(),
            strides: default_strides(),
            buffer: default_buffer(),
            tau: default_tau(),
            tcv_balance: default_balance(),
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: &str| Err(BenchError::InvalidConfig(m.into()));
        if self.context_len == 0 {
            return bad("context_len must be >= 1");
        }
        if self.strides.is_empty() || self.strides.contains(&0) {
            return bad("strides must be a non-empty list of values >= 1");
        }
        if !self.tau.is_finite() {
            return bad("tau must be finite");
        }
        if let TcvBalance::Bernoulli { p } = self.tcv_balance {
            if !(0.0..=1.0).contains(&p) {
                return bad("tcv corruption probability must lie in [0, 1]");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub task: String,
    pub video: String,
    pub stride: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval: Option<Interval>,
    pub reason: SkipReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoSummary {
    pub id: String,
    pub frames: usize,
    pub source: FrameSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub nfs: usize,
    pub tcv: usize,
    pub tcv_coherent: usize,
    pub tcv_corrupted: usize,
    pub skipped: usize,
    pub nfs_per_stride: BTreeMap<usize, usize>,
    pub tcv_per_stride: BTreeMap<usize, usize>,
}

/// Contents of `build.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildManifest {
    pub seed: u64,
    pub metric: String,
    pub config: BenchConfig,
    pub counts: Counts,
    pub videos: Vec<VideoSummary>,
    pub skips: Vec<SkipRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub config: BenchConfig,
    pub metric: String,
    pub videos: Vec<VideoSummary>,
    pub nfs: Vec<NfsItem>,
    pub tcv: Vec<TcvItem>,
    pub skips: Vec<SkipRecord>,
}

impl Benchmark {
    pub fn counts(&self) -> Counts {
        let mut nfs_per_stride = BTreeMap::new();
        let mut tcv_per_stride = BTreeMap::new();
        for s in &self.config.strides {
            nfs_per_stride.insert(*s, 0);
            tcv_per_stride.insert(*s, 0);
        }
        for i in &self.nfs {
            *nfs_per_stride.entry(i.stride).or_default() += 1;
        }
        for i in &self.tcv {
            *tcv_per_stride.entry(i.stride).or_default() += 1;
        }
        let corrupted = self.tcv.iter().filter(|i| i.label == TcvLabel::Corrupted).count();
        Counts {
            nfs: self.nfs.len(),
            tcv: self.tcv.len(),
            tcv_coherent: self.tcv.len() - corrupted,
            tcv_corrupted: corrupted,
            skipped: self.skips.len(),
            nfs_per_stride,
            tcv_per_stride,
        }
    }

    pub fn manifest(&self) -> BuildManifest {
        BuildManifest {
            seed: self.config.seed,
            metric: self.metric.clone(),
            config: self.config.clone(),
            counts: self.counts(),
            videos: self.videos.clone(),
            skips: self.skips.clone(),
        }
    }

    /// Write `nfs.jsonl`, `tcv.jsonl` and `build.json` into `dir`.
    pub fn write(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        write_jsonl_file(&dir.join("nfs.jsonl"), &self.nfs)?;
        write_jsonl_file(&dir.join("tcv.jsonl"), &self.tcv)?;
        let mut json = serde_json::to_string_pretty(&self.manifest())?;
        json.push('\n');
        fs::write(dir.join("build.json"), json)
    }
}

/// A TCV window waiting for its corruption decision.
struct Window {
    video: usize,
    k: usize,
    interval: Interval,
    pruned: Vec<ScoredCandidate>,
}

struct SequenceOutput {
    nfs: Vec<(usize, Result<NfsItem, SkipRecord>)>,
    windows: Vec<(usize, Window)>,
    skips: Vec<SkipRecord>,
}

fn item_id(task: &str, video: &str, stride: usize, k: usize) -> String {
    format!("{task}-{video}-s{stride}-{k:03}")
}

fn process_sequence(
    vi: usize,
    seq: &FrameSequence,
    metric: &SimilarityMetric,
    config: &BenchConfig,
) -> Result<SequenceOutput, BenchError> {
    let mut out = SequenceOutput {
        nfs: Vec::new(),
        windows: Vec::new(),
        skips: Vec::new(),
    };
    let video = seq.video_id();
    let sims = SequenceSimilarity::new(seq, metric)?;
    for &stride in &config.strides {
        let intervals = match partition_intervals(seq.len(), config.context_len, stride) {
            Ok(iv) => iv,
            Err(BenchError::SequenceTooShort { frames, context }) => {
                for task in ["nfs", "tcv"] {
                    out.skips.push(SkipRecord {
                        task: task.into(),
                        video: video.into(),
                        stride,
                        interval: None,
                        reason: SkipReason::SequenceTooShort { frames, context },
                    });
                }
                continue;
            }
            Err(e) => return Err(e),
        };
        for (k, interval) in intervals.into_iter().enumerate() {
            let ds = distractor_set(seq.len(), &sims, interval, config.buffer, config.tau);
            let seed = derive_seed(config.seed, &[video.into(), "nfs".into(), stride.into(), k.into()]);
            let nfs = build_nfs_item(item_id("nfs", video, stride, k), stride, interval, seq, &ds.pruned, seed)
                .map_err(|reason| SkipRecord {
                    task: "nfs".into(),
                    video: video.into(),
                    stride,
                    interval: Some(interval),
                    reason,
                });
            out.nfs.push((stride, nfs));
            out.windows.push((
                stride,
                Window {
                    video: vi,
                    k,
                    interval,
                    pruned: ds.pruned,
                },
            ));
        }
    }
    Ok(out)
}

/// Decide which windows of one stride are corrupted. Returns `Some(flag)` for
/// windows that become items and `None` for windows dropped to keep balance.
fn corruption_plan(
    windows: &[&Window],
    sequences: &[FrameSequence],
    stride: usize,
    config: &BenchConfig,
) -> Vec<Option<bool>> {
    match config.tcv_balance {
        TcvBalance::Bernoulli { p } => windows
            .iter()
            .map(|w| {
                let video = sequences[w.video].video_id();
                let coin = derive_seed(config.seed, &[video.into(), "tcv-coin".into(), stride.into(), w.k.into()]);
                Some(rng_from_seed(coin).random_bool(p))
            })
            .collect(),
        TcvBalance::Exact => {
            let n = windows.len();
            let mut eligible: Vec<usize> = (0..n).filter(|&i| !windows[i].pruned.is_empty()).collect();
            let mut rng = rng_from_seed(derive_seed(config.seed, &["tcv-balance".into(), stride.into()]));
            eligible.shuffle(&mut rng);
            let k = (n / 2).min(eligible.len());
            let mut plan = vec![None; n];
            for &i in &eligible[..k] {
                plan[i] = Some(true);
            }
            let mut rest: Vec<usize> = (0..n).filter(|&i| plan[i].is_none()).collect();
            let coherent = if k == n / 2 { n - k } else { k };
            rest.shuffle(&mut rng);
            for &i in &rest[..coherent] {
                plan[i] = Some(false);
            }
            plan
        }
    }
}

/// Build NFS and TCV items for every sequence and stride.
pub fn build_benchmark(
    sequences: &[FrameSequence],
    metric: &SimilarityMetric,
    config: &BenchConfig,
) -> Result<Benchmark, BenchError> {
    config.validate()?;
    if sequences.is_empty() {
        return Err(BenchError::NoSequences);
    }
    let outputs: Vec<SequenceOutput> = sequences
        .par_iter()
        .enumerate()
        .map(|(vi, seq)| process_sequence(vi, seq, metric, config))
        .collect::<Result<_, _>>()?;

    let mut nfs = Vec::new();
    let mut skips = Vec::new();
    for out in &outputs {
        skips.extend(out.skips.iter().cloned());
        for (_, r) in &out.nfs {
            match r {
                Ok(item) => nfs.push(item.clone()),
                Err(skip) => skips.push(skip.clone()),
            }
        }
    }

    let mut tcv_slots: Vec<(usize, usize, Option<TcvItem>)> = Vec::new();
    for &stride in &config.strides {
        let windows: Vec<&Window> = outputs
            .iter()
            .flat_map(|o| o.windows.iter())
            .filter(|(s, _)| *s == stride)
            .map(|(_, w)| w)
            .collect();
        let plan = corruption_plan(&windows, sequences, stride, config);
        for (w, decision) in windows.into_iter().zip(plan) {
            let seq = &sequences[w.video];
            let video = seq.video_id();
            let skip = |reason| SkipRecord {
                task: "tcv".into(),
                video: video.into(),
                stride,
                interval: Some(w.interval),
                reason,
            };
            let Some(corrupt) = decision else {
                skips.push(skip(SkipReason::ClassBalance));
                continue;
            };
            let seed = derive_seed(config.seed, &[video.into(), "tcv".into(), stride.into(), w.k.into()]);
            match build_tcv_item(item_id("tcv", video, stride, w.k), stride, w.interval, seq, &w.pruned, seed, corrupt) {
                Ok(item) => tcv_slots.push((w.video, stride, Some(item))),
                Err(reason) => skips.push(skip(reason)),
            }
        }
    }
    // order TCV like NFS: by video, then stride, then interval
    let stride_rank = |s: usize| config.strides.iter().position(|&x| x == s).unwrap_or(usize::MAX);
    tcv_slots.sort_by_key(|(v, s, item)| (*v, stride_rank(*s), item.as_ref().map(|i| i.interval.start)));
    let tcv: Vec<TcvItem> = tcv_slots.into_iter().filter_map(|(_, _, i)| i).collect();

    if nfs.is_empty() && tcv.is_empty() {
        return Err(BenchError::EmptyBenchmark { skipped: skips.len() });
    }
    let videos = sequences
        .iter()
        .map(|s| VideoSummary {
            id: s.video_id().to_string(),
            frames: s.len(),
            source: s.source(),
        })
        .collect();
    Ok(Benchmark {
        config: config.clone(),
        metric: metric.name().to_string(),
        videos,
        nfs,
        tcv,
        skips,
    })
}
