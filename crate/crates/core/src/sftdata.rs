//! Multi-task fine-tuning data: dynamic perception items, SDF-guided CoT
//! sequences, the original NFS/TCV items, prompt assets and the
//! expert/self-distilled mixing manifest.
//!
//! Reasoning text is produced outside this crate. Every emitted item carries
//! `provenance: unlabeled` and an empty `reasoning_text`; `mix.json` says
//! which ids should be annotated by the stronger model and which by the
//! target model itself.

use std::collections::HashSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::RgbImage;
use rand::seq::{IndexedRandom, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::benchgen::{distractor_candidates, BenchConfig, Interval, NfsItem, SkipReason, TcvItem, TcvLabel};
use crate::jsonl::write_jsonl_file;
use crate::seed::{derive_seed, rng_from_seed};
use crate::similarity::{features_similarity, frame_features};

pub const PROMPT_IDS: [&str; 10] = [
    "nfs_cot",
    "tcv_cot",
    "self_annotate",
    "expert_annotate",
    "ablation_1",
    "ablation_2",
    "ablation_3",
    "ablation_4",
    "ablation_5",
    "dynamic_perception",
];

const PROMPTS: [&str; 10] = [
    include_str!("../assets/prompts/nfs_cot.txt"),
    include_str!("../assets/prompts/tcv_cot.txt"),
    include_str!("../assets/prompts/self_annotate.txt"),
    include_str!("../assets/prompts/expert_annotate.txt"),
    include_str!("../assets/prompts/ablation_1.txt"),
    include_str!("../assets/prompts/ablation_2.txt"),
    include_str!("../assets/prompts/ablation_3.txt"),
    include_str!("../assets/prompts/ablation_4.txt"),
    include_str!("../assets/prompts/ablation_5.txt"),
    include_str!("../assets/prompts/dynamic_perception.txt"),
];

#[derive(Debug, Error)]
pub enum SftError {
    #[error("unknown prompt id `{0}`")]
    UnknownPrompt(String),
    #[error("{pool} pool has {available} items but {needed} are required")]
    Shortfall {
        pool: &'static str,
        needed: usize,
        available: usize,
    },
    #[error("invalid sft config: {0}")]
    InvalidConfig(String),
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("no sdf renders for video `{0}`")]
    MissingSdf(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> SftError + '_ {
    move |source| SftError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Bundled prompt text, verbatim.
pub fn emit_prompts(id: &str) -> Result<&'static str, SftError> {
    PROMPT_IDS
        .iter()
        .position(|p| *p == id)
        .map(|i| PROMPTS[i])
        .ok_or_else(|| SftError::UnknownPrompt(id.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SftTask {
    DynamicPerception,
    SdfCot,
    Nfs,
    Tcv,
}

impl SftTask {
    pub const ALL: [SftTask; 4] = [SftTask::DynamicPerception, SftTask::SdfCot, SftTask::Nfs, SftTask::Tcv];

    pub fn name(self) -> &'static str {
        match self {
            SftTask::DynamicPerception => "dynamic_perception",
            SftTask::SdfCot => "sdf_cot",
            SftTask::Nfs => "nfs",
            SftTask::Tcv => "tcv",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Expert,
    #[serde(rename = "self")]
    SelfDistilled,
    Unlabeled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameKind {
    Rgb,
    Sdf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameRef {
    pub path: String,
    pub kind: FrameKind,
}

impl FrameRef {
    pub fn rgb(path: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            kind: FrameKind::Rgb,
        }
    }

    pub fn sdf(path: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            kind: FrameKind::Sdf,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftItem {
    pub id: String,
    pub task: SftTask,
    pub video: String,
    /// Benchmark item this example was derived from.
    pub source_item: String,
    pub frames: Vec<FrameRef>,
    pub candidates: Vec<FrameRef>,
    pub prompt_template: String,
    pub question: String,
    pub answer: String,
    pub reasoning_text: Option<String>,
    pub provenance: Provenance,
}

pub fn option_letter(k: usize) -> String {
    assert!(k < 26, "at most 26 options");
    char::from(b'A' + k as u8).to_string()
}

fn letters(n: usize) -> String {
    (0..n).map(option_letter).collect::<Vec<_>>().join(", ")
}

fn nfs_question(with_sdf: bool) -> String {
    let mut q = String::from("Given a sequence of video frames: [Video Frames]\n");
    if with_sdf {
        q.push_str("The last image is the Scene Dynamic Field (SDF) of the last given frame; deeper blue marks faster motion.\n");
    }
    q.push_str("Which one of the following is the next frame? [Choices]\n");
    q.push_str(&format!("Your response should be one of the following: {}.", letters(4)));
    q
}

fn tcv_question() -> String {
    "Given a sequence of video frames: [Video Frames]\n\
     Does any frame break the temporal coherence of the sequence? Answer \"yes\" or \"no\"."
        .to_string()
}

/// `F_CoT = [f_1, ..., f_t, sdf(f_t)]`.
pub fn build_sdf_cot_sequence(frames: &[String], sdf_of_last: &str) -> Vec<FrameRef> {
    assert!(!frames.is_empty(), "need at least one frame");
    frames
        .iter()
        .map(FrameRef::rgb)
        .chain(std::iter::once(FrameRef::sdf(sdf_of_last)))
        .collect()
}

/// One true SDF plus `n - 1` sampled distractor SDFs in seeded order.
pub fn build_dynamic_perception_item(
    id: String,
    video: &str,
    rgb_seq: &[String],
    true_sdf: &str,
    distractor_sdfs: &[String],
    n: usize,
    seed: u64,
) -> Result<SftItem, SkipReason> {
    assert!((2..=26).contains(&n), "option count must be in 2..=26");
    if distractor_sdfs.len() < n - 1 {
        return Err(SkipReason::InsufficientDistractors {
            needed: n - 1,
            available: distractor_sdfs.len(),
        });
    }
    let mut rng = rng_from_seed(seed);
    let mut options: Vec<&str> = std::iter::once(true_sdf)
        .chain(distractor_sdfs.choose_multiple(&mut rng, n - 1).map(String::as_str))
        .collect();
    options.shuffle(&mut rng);
    let answer = options.iter().position(|o| *o == true_sdf).expect("true sdf present");
    Ok(SftItem {
        id,
        task: SftTask::DynamicPerception,
        video: video.to_string(),
        source_item: String::new(),
        frames: rgb_seq.iter().map(FrameRef::rgb).collect(),
        candidates: options.into_iter().map(FrameRef::sdf).collect(),
        prompt_template: "dynamic_perception".into(),
        question: emit_prompts("dynamic_perception")
            .expect("bundled")
            .trim_end()
            .replace("{letters}", &letters(n)),
        answer: option_letter(answer),
        reasoning_text: None,
        provenance: Provenance::Unlabeled,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixManifest {
    /// `[expert, self]`.
    pub ratio: [u32; 2],
    pub total: usize,
    pub rounding: String,
    pub seed: u64,
    pub expert_count: usize,
    pub self_count: usize,
    pub expert: Vec<String>,
    #[serde(rename = "self")]
    pub self_ids: Vec<String>,
}

/// `round(total * e / (e + s))` with halves rounded up, in exact integer
/// arithmetic.
pub fn expert_count(total: usize, ratio: [u32; 2]) -> usize {
    let (e, s) = (ratio[0] as u128, ratio[1] as u128);
    let sum = e + s;
    ((2 * total as u128 * e + sum) / (2 * sum)) as usize
}

/// Seeded split of `total` ids into disjoint expert and self sets. Output
/// ids keep their pool order.
pub fn mix_manifest(
    expert_pool: &[String],
    self_pool: &[String],
    ratio: [u32; 2],
    total: usize,
    seed: u64,
) -> Result<MixManifest, SftError> {
    if ratio[0] == 0 && ratio[1] == 0 {
        return Err(SftError::InvalidConfig("mix ratio must not be 0:0".into()));
    }
    let n_expert = expert_count(total, ratio);
    let n_self = total - n_expert;
    if n_expert > expert_pool.len() {
        return Err(SftError::Shortfall {
            pool: "expert",
            needed: n_expert,
            available: expert_pool.len(),
        });
    }
    let mut rng = rng_from_seed(derive_seed(seed, &["mix".into()]));
    let picked: HashSet<&String> = expert_pool.choose_multiple(&mut rng, n_expert).collect();
    let expert: Vec<String> = expert_pool.iter().filter(|id| picked.contains(id)).cloned().collect();
    let remaining: Vec<&String> = self_pool.iter().filter(|id| !picked.contains(id)).collect();
    if n_self > remaining.len() {
        return Err(SftError::Shortfall {
            pool: "self",
            needed: n_self,
            available: remaining.len(),
        });
    }
    let chosen: HashSet<&String> = remaining.choose_multiple(&mut rng, n_self).copied().collect();
    let self_ids = remaining.into_iter().filter(|id| chosen.contains(id)).cloned().collect();
    Ok(MixManifest {
        ratio,
        total,
        rounding: "round_half_up".into(),
        seed,
        expert_count: n_expert,
        self_count: n_self,
        expert,
        self_ids,
    })
}

fn default_count() -> usize {
    25
}

fn default_options() -> usize {
    4
}

fn default_ratio() -> [u32; 2] {
    [1, 10]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskCounts {
    #[serde(default = "default_count")]
    pub dynamic_perception: usize,
    #[serde(default = "default_count")]
    pub sdf_cot: usize,
    #[serde(default = "default_count")]
    pub nfs: usize,
    #[serde(default = "default_count")]
    pub tcv: usize,
}

impl Default for TaskCounts {
    fn default() -> Self {
        Self {
            dynamic_perception: default_count(),
            sdf_cot: default_count(),
            nfs: default_count(),
            tcv: default_count(),
        }
    }
}

impl TaskCounts {
    pub fn get(&self, task: SftTask) -> usize {
        match task {
            SftTask::DynamicPerception => self.dynamic_perception,
            SftTask::SdfCot => self.sdf_cot,
            SftTask::Nfs => self.nfs,
            SftTask::Tcv => self.tcv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixConfig {
    #[serde(default = "default_ratio")]
    pub ratio: [u32; 2],
    /// Defaults to every emitted item.
    #[serde(default)]
    pub total: Option<usize>,
}

impl Default for MixConfig {
    fn default() -> Self {
        Self {
            ratio: default_ratio(),
            total: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SftConfig {
    #[serde(default)]
    pub counts: TaskCounts,
    /// Options per dynamic perception item.
    #[serde(default = "default_options")]
    pub options: usize,
    #[serde(default)]
    pub mix: MixConfig,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self {
            counts: TaskCounts::default(),
            options: default_options(),
            mix: MixConfig::default(),
        }
    }
}

impl SftConfig {
    pub fn validate(&self) -> Result<(), SftError> {
        if !(2..=26).contains(&self.options) {
            return Err(SftError::InvalidConfig(format!(
                "options must be in 2..=26, got {}",
                self.options
            )));
        }
        if self.mix.ratio == [0, 0] {
            return Err(SftError::InvalidConfig("mix ratio must not be 0:0".into()));
        }
        Ok(())
    }
}

/// SDF renders of one video, indexed by 0-based frame position.
#[derive(Debug, Clone)]
pub struct SdfVideo {
    pub video: String,
    pub paths: Vec<String>,
    pub images: Vec<Arc<RgbImage>>,
}

pub struct SftSources<'a> {
    pub nfs: &'a [NfsItem],
    pub tcv: &'a [TcvItem],
    pub sdf: &'a [SdfVideo],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task: SftTask,
    pub requested: usize,
    pub emitted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftSummary {
    pub seed: u64,
    pub tasks: Vec<TaskSummary>,
    pub skipped_dynamic_perception: usize,
}

#[derive(Debug, Clone)]
pub struct SftDataset {
    pub items: Vec<SftItem>,
    pub mix: MixManifest,
    pub summary: SftSummary,
}

/// Seeded subset of `0..n` of size `min(k, n)`, returned in ascending order.
fn sample_indices(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng_from_seed(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, k.min(n)).into_vec();
    idx.sort_unstable();
    idx
}

/// All SDF frames of all videos with precomputed similarity features.
struct SdfPool<'a> {
    videos: &'a [SdfVideo],
    /// Flat offset of each video's first frame.
    offsets: Vec<usize>,
    features: Vec<Option<Vec<f64>>>,
}

impl<'a> SdfPool<'a> {
    fn new(videos: &'a [SdfVideo]) -> Self {
        let mut offsets = Vec::with_capacity(videos.len());
        let mut acc = 0;
        for v in videos {
            offsets.push(acc);
            acc += v.images.len();
        }
        let features = videos
            .par_iter()
            .flat_map_iter(|v| v.images.iter().map(|img| frame_features(img)).collect::<Vec<_>>())
            .collect();
        Self { videos, offsets, features }
    }

    fn video_index(&self, video: &str) -> Result<usize, SftError> {
        self.videos
            .iter()
            .position(|v| v.video == video)
            .ok_or_else(|| SftError::MissingSdf(video.to_string()))
    }

    /// Cross-video candidates for the SDF of `interval.end` in `video`,
    /// excluding same-video frames within the buffer, pruned at `tau`.
    fn distractors(&self, vi: usize, interval: Interval, buffer: usize, tau: f64) -> Vec<String> {
        let anchor = self.offsets[vi] + interval.end - 1;
        let fa = self.features[anchor].as_deref();
        let mut out = Vec::new();
        for (wi, v) in self.videos.iter().enumerate() {
            let own = if wi == vi {
                distractor_candidates(interval, v.paths.len(), buffer)
            } else {
                (1..=v.paths.len()).collect()
            };
            for t in own {
                let flat = self.offsets[wi] + t - 1;
                if flat == anchor {
                    continue;
                }
                if features_similarity(fa, self.features[flat].as_deref()) < tau {
                    out.push(v.paths[t - 1].clone());
                }
            }
        }
        out
    }
}

fn sft_nfs(item: &NfsItem) -> SftItem {
    SftItem {
        id: format!("sft-{}", item.id),
        task: SftTask::Nfs,
        video: item.video.clone(),
        source_item: item.id.clone(),
        frames: item.context.iter().map(FrameRef::rgb).collect(),
        candidates: item.options.iter().map(FrameRef::rgb).collect(),
        prompt_template: "nfs_cot".into(),
        question: nfs_question(false),
        answer: item.answer.clone(),
        reasoning_text: None,
        provenance: Provenance::Unlabeled,
    }
}

fn sft_tcv(item: &TcvItem) -> SftItem {
    SftItem {
        id: format!("sft-{}", item.id),
        task: SftTask::Tcv,
        video: item.video.clone(),
        source_item: item.id.clone(),
        frames: item.frames.iter().map(FrameRef::rgb).collect(),
        candidates: vec![],
        prompt_template: "tcv_cot".into(),
        question: tcv_question(),
        answer: match item.label {
            TcvLabel::Corrupted => "yes",
            TcvLabel::Coherent => "no",
        }
        .into(),
        reasoning_text: None,
        provenance: Provenance::Unlabeled,
    }
}

/// Copy every referenced file into `dataset/{task}/{id}/` and rewrite paths
/// to point at the copies. Paths are relative to `root`.
fn materialize(root: &Path, mut item: SftItem) -> Result<SftItem, SftError> {
    let rel_dir = format!("dataset/{}/{}", item.task.name(), item.id);
    let dir = root.join(&rel_dir);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let copy = |src: &str, name: String| -> Result<String, SftError> {
        let from = root.join(src);
        if !from.is_file() {
            return Err(SftError::MissingFile(from));
        }
        let to = dir.join(&name);
        fs::copy(&from, &to).map_err(io_err(&to))?;
        Ok(format!("{rel_dir}/{name}"))
    };
    for (k, f) in item.frames.iter_mut().enumerate() {
        let name = match f.kind {
            FrameKind::Rgb => format!("frame_{:02}.png", k + 1),
            FrameKind::Sdf => format!("sdf_{:02}.png", k + 1),
        };
        f.path = copy(&f.path, name)?;
    }
    for (k, c) in item.candidates.iter_mut().enumerate() {
        c.path = copy(&c.path, format!("option_{}.png", option_letter(k)))?;
    }
    let json_path = dir.join("item.json");
    let mut json = serde_json::to_string_pretty(&item).expect("item serializes");
    json.push('\n');
    fs::write(&json_path, json).map_err(io_err(&json_path))?;
    Ok(item)
}

/// Build all four task types, copy their files under `root/dataset`, and
/// write `manifest.jsonl`, `mix.json`, `summary.json` and `prompts/`.
pub fn emit_sft_dataset(
    root: &Path,
    src: &SftSources<'_>,
    bench: &BenchConfig,
    config: &SftConfig,
    seed: u64,
) -> Result<SftDataset, SftError> {
    config.validate()?;
    let counts = &config.counts;
    let task_seed = |t: SftTask| derive_seed(seed, &["sft".into(), t.name().into()]);
    let mut items: Vec<SftItem> = Vec::new();
    let mut skipped_dp = 0;

    // dynamic perception: walk a seeded permutation of NFS items until enough
    // of them have a full set of distractor SDFs
    // ingested videos have no SDF renders
    let with_sdf: Vec<&NfsItem> = src
        .nfs
        .iter()
        .filter(|i| src.sdf.iter().any(|v| v.video == i.video))
        .collect();

    let mut dp_items = Vec::new();
    if counts.dynamic_perception > 0 && !with_sdf.is_empty() {
        let pool = SdfPool::new(src.sdf);
        let mut order: Vec<usize> = (0..with_sdf.len()).collect();
        order.shuffle(&mut rng_from_seed(task_seed(SftTask::DynamicPerception)));
        let built: Vec<Result<Option<SftItem>, SftError>> = order
            .par_iter()
            .map(|&i| {
                let item = with_sdf[i];
                let vi = pool.video_index(&item.video)?;
                let true_sdf = src.sdf[vi]
                    .paths
                    .get(item.interval.end - 1)
                    .ok_or_else(|| SftError::MissingSdf(item.video.clone()))?;
                let distractors = pool.distractors(vi, item.interval, bench.buffer, bench.tau);
                let s = derive_seed(seed, &["sft-dp".into(), item.id.as_str().into()]);
                let built = build_dynamic_perception_item(
                    format!("dp-{}", item.id),
                    &item.video,
                    &item.context,
                    true_sdf,
                    &distractors,
                    config.options,
                    s,
                );
                Ok(built.ok().map(|mut it| {
                    it.source_item = item.id.clone();
                    it
                }))
            })
            .collect();
        for r in built {
            if dp_items.len() == counts.dynamic_perception {
                break;
            }
            match r? {
                Some(it) => dp_items.push(it),
                None => skipped_dp += 1,
            }
        }
        dp_items.sort_by(|a, b| a.id.cmp(&b.id));
    }
    items.extend(dp_items);

    if counts.sdf_cot > 0 {
        for i in sample_indices(with_sdf.len(), counts.sdf_cot, task_seed(SftTask::SdfCot)) {
            let item = with_sdf[i];
            let video = src
                .sdf
                .iter()
                .find(|v| v.video == item.video)
                .ok_or_else(|| SftError::MissingSdf(item.video.clone()))?;
            let sdf = video
                .paths
                .get(item.interval.end - 1)
                .ok_or_else(|| SftError::MissingSdf(item.video.clone()))?;
            let mut it = sft_nfs(item);
            it.id = format!("cot-{}", item.id);
            it.task = SftTask::SdfCot;
            it.frames = build_sdf_cot_sequence(&item.context, sdf);
            it.question = nfs_question(true);
            items.push(it);
        }
    }
    for i in sample_indices(src.nfs.len(), counts.nfs, task_seed(SftTask::Nfs)) {
        items.push(sft_nfs(&src.nfs[i]));
    }
    for i in sample_indices(src.tcv.len(), counts.tcv, task_seed(SftTask::Tcv)) {
        items.push(sft_tcv(&src.tcv[i]));
    }

    let items: Vec<SftItem> = items
        .into_par_iter()
        .map(|it| materialize(root, it))
        .collect::<Result<_, _>>()?;

    let ids: Vec<String> = items.iter().map(|i| i.id.clone()).collect();
    let total = config.mix.total.unwrap_or(ids.len());
    let mix = mix_manifest(&ids, &ids, config.mix.ratio, total, seed)?;

    let tasks = SftTask::ALL
        .iter()
        .map(|&t| TaskSummary {
            task: t,
            requested: counts.get(t),
            emitted: items.iter().filter(|i| i.task == t).count(),
        })
        .collect();
    let summary = SftSummary {
        seed,
        tasks,
        skipped_dynamic_perception: skipped_dp,
    };

    let out = root.join("dataset");
    let manifest = out.join("manifest.jsonl");
    write_jsonl_file(&manifest, &items).map_err(io_err(&manifest))?;
    for (name, value) in [
        ("mix.json", serde_json::to_value(&mix)),
        ("summary.json", serde_json::to_value(&summary)),
    ] {
        let path = out.join(name);
        let mut text = serde_json::to_string_pretty(&value.expect("serializable")).expect("serializable");
        text.push('\n');
        fs::write(&path, text).map_err(io_err(&path))?;
    }
    let prompts = out.join("prompts");
    fs::create_dir_all(&prompts).map_err(io_err(&prompts))?;
    for (id, text) in PROMPT_IDS.iter().zip(PROMPTS) {
        let path = prompts.join(format!("{id}.txt"));
        fs::write(&path, text).map_err(io_err(&path))?;
    }
    Ok(SftDataset { items, mix, summary })
}
