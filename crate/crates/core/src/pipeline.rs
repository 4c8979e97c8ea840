//! The four pipeline stages and their on-disk layout.
//!
//! ```text
//! <root>/
//!   scenes.json              per-video scene and camera
//!   traces/<video>.trace
//!   frames/index.txt, frames/<video>/NNNN.png
//!   sdf/index.json, sdf/<video>/NNNN.png, sdf/<video>/NNNN.f32
//!   bench/nfs.jsonl, bench/tcv.jsonl, bench/build.json
//!   dataset/...
//!   checksums.sha256
//!   .stages/<stage>          completion markers
//! ```
//!
//! A stage whose marker matches the current configuration is skipped unless
//! forced. Running a stage clears its outputs first and invalidates every
//! later stage.

use std::error::Error as StdError;
use std::fs;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use image::RgbImage;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::benchgen::{build_benchmark, NfsItem, TcvItem};
use crate::camera::CameraModel;
use crate::config::{check_video_id, ConfigError, PipelineConfig};
use crate::ingest::{frame_path, ingest_dir, load_sequences, write_index, IndexEntry};
use crate::integrity::write_checksums;
use crate::jsonl::read_jsonl_file;
use crate::raster::emit_rgb;
use crate::scenes::named_scene;
use crate::sdf::{render_sdf, SdfParams};
use crate::seed::{derive_seed, rng_from_seed};
use crate::benchgen::FrameSource;
use crate::sftdata::{emit_sft_dataset, SdfVideo, SftSources};
use crate::similarity::{EmbeddingTable, SimilarityMetric};
use crate::sim::{simulate, BackgroundPreset, SimScene};
use crate::trace::{read_trace, write_trace};

const LIQUID_COLORS: [[u8; 3]; 5] = [[40, 90, 200], [200, 120, 40], [150, 40, 45], [50, 150, 90], [120, 60, 160]];

const CAMERA_VIEWS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Simulate,
    RenderSdf,
    BuildBench,
    EmitSft,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Simulate, Stage::RenderSdf, Stage::BuildBench, Stage::EmitSft];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::RenderSdf => "render-sdf",
            Stage::BuildBench => "build-bench",
            Stage::EmitSft => "emit-sft",
        }
    }

    fn outputs(self) -> &'static [&'static str] {
        match self {
            Stage::Simulate => &["scenes.json", "traces", "frames"],
            Stage::RenderSdf => &["sdf"],
            Stage::BuildBench => &["bench"],
            Stage::EmitSft => &["dataset"],
        }
    }

    fn prerequisite(self) -> Option<Stage> {
        match self {
            Stage::Simulate => None,
            Stage::RenderSdf => Some(Stage::Simulate),
            Stage::BuildBench => Some(Stage::Simulate),
            Stage::EmitSft => Some(Stage::RenderSdf),
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("stage `{stage}`: outputs were produced with a different configuration; rerun with --force")]
    Stale { stage: &'static str },
    #[error("stage `{stage}` needs `{needs}` to run first")]
    MissingPrerequisite { stage: &'static str, needs: &'static str },
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<dyn StdError + Send + Sync>,
    },
}

impl PipelineError {
    fn stage(stage: Stage, e: impl Into<Box<dyn StdError + Send + Sync>>) -> Self {
        PipelineError::Stage {
            stage: stage.name(),
            source: e.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageReport {
    pub stage: Stage,
    pub skipped: bool,
    pub summary: String,
}

/// Scene and camera of one simulated video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoScene {
    pub id: String,
    pub preset: String,
    pub view: usize,
    pub scene: SimScene,
    pub camera: CameraModel,
}

/// Per-video variation of background, liquid color, camera view and emitter.
pub fn video_scenes(config: &PipelineConfig) -> Vec<VideoScene> {
    let sim = &config.sim;
    config
        .sim_video_ids()
        .into_iter()
        .enumerate()
        .map(|(k, id)| {
            let preset = sim.presets[k % sim.presets.len()].clone();
            let mut scene = named_scene(&preset, sim.steps, derive_seed(config.seed, &["sim".into(), id.as_str().into()]))
                .expect("presets validated");
            let mut rng = rng_from_seed(derive_seed(config.seed, &["look".into(), id.as_str().into()]));
            scene.dt = sim.dt;
            scene.background = BackgroundPreset::ALL[rng.random_range(0..BackgroundPreset::ALL.len())];
            scene.liquid_color = LIQUID_COLORS[rng.random_range(0..LIQUID_COLORS.len())];
            scene.emitter.speed *= rng.random_range(0.8..1.2);
            scene.emitter.position.z += rng.random_range(-0.1..0.1);
            if let Some(fill) = scene.initial_fill.as_mut() {
                fill.swirl *= rng.random_range(0.8..1.2);
            }
            let view = k % CAMERA_VIEWS;
            let camera = CameraModel::preset_view(view, &scene.container, sim.width, sim.height);
            VideoScene {
                id,
                preset,
                view,
                scene,
                camera,
            }
        })
        .collect()
}

fn fingerprint(stage: Stage, config: &PipelineConfig) -> String {
    let c = config;
    let relevant = match stage {
        Stage::Simulate => serde_json::json!([c.seed, c.sim, c.ingest]),
        Stage::RenderSdf => serde_json::json!([c.seed, c.sim, c.sdf]),
        Stage::BuildBench => serde_json::json!([c.seed, c.sim, c.ingest, c.bench]),
        Stage::EmitSft => serde_json::json!([c.seed, c.sim, c.ingest, c.sdf, c.bench, c.sft]),
    };
    let mut hex = String::new();
    for b in Sha256::digest(relevant.to_string().as_bytes()).iter() {
        hex.push_str(&format!("{b:02x}"));
    }
    hex
}

fn marker(root: &Path, stage: Stage) -> std::path::PathBuf {
    root.join(".stages").join(stage.name())
}

fn remove_path(p: &Path) -> io::Result<()> {
    if p.is_dir() {
        fs::remove_dir_all(p)
    } else if p.exists() {
        fs::remove_file(p)
    } else {
        Ok(())
    }
}

fn write_pretty<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    text.push('\n');
    fs::write(path, text)
}

/// Run one stage, honoring markers. `force` reruns even when up to date.
pub fn run_stage(root: &Path, config: &PipelineConfig, stage: Stage, force: bool) -> Result<StageReport, PipelineError> {
    config.validate()?;
    let fp = fingerprint(stage, config);
    let m = marker(root, stage);
    if !force {
        if let Ok(existing) = fs::read_to_string(&m) {
            if existing.trim() == fp {
                return Ok(StageReport {
                    stage,
                    skipped: true,
                    summary: "up to date".into(),
                });
            }
            return Err(PipelineError::Stale { stage: stage.name() });
        }
    }
    if let Some(pre) = stage.prerequisite() {
        if !marker(root, pre).exists() {
            return Err(PipelineError::MissingPrerequisite {
                stage: stage.name(),
                needs: pre.name(),
            });
        }
    }
    let err = |e: io::Error| PipelineError::stage(stage, e);
    for later in Stage::ALL.iter().filter(|s| **s >= stage) {
        remove_path(&marker(root, *later)).map_err(err)?;
    }
    for out in stage.outputs() {
        remove_path(&root.join(out)).map_err(err)?;
    }
    fs::create_dir_all(root.join(".stages")).map_err(err)?;
    let summary = match stage {
        Stage::Simulate => stage_simulate(root, config),
        Stage::RenderSdf => stage_render_sdf(root, config),
        Stage::BuildBench => stage_build_bench(root, config),
        Stage::EmitSft => stage_emit_sft(root, config),
    }
    .map_err(|e| PipelineError::stage(stage, e))?;
    write_checksums(root).map_err(err)?;
    fs::write(&m, format!("{fp}\n")).map_err(err)?;
    Ok(StageReport {
        stage,
        skipped: false,
        summary,
    })
}

/// All four stages in order.
pub fn run_pipeline(root: &Path, config: &PipelineConfig, force: bool) -> Result<Vec<StageReport>, PipelineError> {
    let mut reports = Vec::new();
    let mut rerun = force;
    for stage in Stage::ALL {
        // once a stage reruns, everything after it is stale
        let r = run_stage(root, config, stage, rerun)?;
        rerun |= !r.skipped;
        reports.push(r);
    }
    Ok(reports)
}

type BoxError = Box<dyn StdError + Send + Sync>;

fn stage_simulate(root: &Path, config: &PipelineConfig) -> Result<String, BoxError> {
    let scenes = video_scenes(config);
    fs::create_dir_all(root.join("traces"))?;
    fs::create_dir_all(root.join("frames"))?;
    let radius = config.sim.particle_radius;
    let counts: Vec<usize> = scenes
        .par_iter()
        .map(|vs| -> Result<usize, BoxError> {
            let snaps = simulate(&vs.scene).map_err(|e| format!("video `{}`: {e}", vs.id))?;
            let mut w = BufWriter::new(fs::File::create(root.join(format!("traces/{}.trace", vs.id)))?);
            write_trace(&mut w, vs.scene.dt, &snaps)?;
            w.flush()?;
            fs::create_dir_all(root.join("frames").join(&vs.id))?;
            snaps.par_iter().enumerate().try_for_each(|(i, s)| -> Result<(), BoxError> {
                let img = emit_rgb(s, &vs.camera, &vs.scene, radius)?;
                img.save(root.join(frame_path(&vs.id, i + 1)))?;
                Ok(())
            })?;
            Ok(snaps.len())
        })
        .collect::<Result<_, _>>()?;

    let mut entries: Vec<IndexEntry> = scenes
        .iter()
        .zip(&counts)
        .map(|(vs, &n)| IndexEntry {
            video: vs.id.clone(),
            frames: n,
            fps: 1.0 / vs.scene.dt,
            source: FrameSource::Simulated,
        })
        .collect();
    let mut ingested = 0;
    if let Some(ing) = &config.ingest {
        let more = ingest_dir(&ing.dir, &ing.index_path(), root)?;
        for e in &more {
            check_video_id(&e.video)?;
            if entries.iter().any(|x| x.video == e.video) {
                return Err(format!("ingested video id `{}` clashes with a simulated video", e.video).into());
            }
        }
        ingested = more.len();
        entries.extend(more);
    }
    let mut w = BufWriter::new(fs::File::create(root.join("frames/index.txt"))?);
    write_index(&mut w, &entries)?;
    w.flush()?;
    write_pretty(&root.join("scenes.json"), &scenes)?;
    let frames: usize = entries.iter().map(|e| e.frames).sum();
    Ok(format!(
        "{} simulated and {ingested} ingested videos, {frames} frames",
        scenes.len()
    ))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SdfFrameFiles {
    pub png: String,
    pub sidecar: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SdfVideoIndex {
    pub video: String,
    pub width: u32,
    pub height: u32,
    pub frames: Vec<SdfFrameFiles>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SdfIndex {
    pub params: SdfParams,
    pub videos: Vec<SdfVideoIndex>,
}

pub fn read_scenes(root: &Path) -> io::Result<Vec<VideoScene>> {
    serde_json::from_reader(BufReader::new(fs::File::open(root.join("scenes.json"))?)).map_err(io::Error::other)
}

fn stage_render_sdf(root: &Path, config: &PipelineConfig) -> Result<String, BoxError> {
    let scenes = read_scenes(root)?;
    let params = config.sdf;
    let radius = config.sim.particle_radius;
    fs::create_dir_all(root.join("sdf"))?;
    let videos: Vec<SdfVideoIndex> = scenes
        .par_iter()
        .map(|vs| -> Result<SdfVideoIndex, BoxError> {
            let path = root.join(format!("traces/{}.trace", vs.id));
            let trace = read_trace(BufReader::new(fs::File::open(&path)?))
                .map_err(|e| format!("{}: {e}", path.display()))?;
            fs::create_dir_all(root.join("sdf").join(&vs.id))?;
            let frames = trace
                .snapshots
                .par_iter()
                .enumerate()
                .map(|(i, s)| -> Result<SdfFrameFiles, BoxError> {
                    let files = SdfFrameFiles {
                        png: format!("sdf/{}/{:04}.png", vs.id, i + 1),
                        sidecar: format!("sdf/{}/{:04}.f32", vs.id, i + 1),
                    };
                    let rgb = emit_rgb(s, &vs.camera, &vs.scene, radius)?;
                    let field = render_sdf(s, &vs.camera, &params)?;
                    field.to_rgb(Some(&rgb))?.save(root.join(&files.png))?;
                    let mut w = BufWriter::new(fs::File::create(root.join(&files.sidecar))?);
                    field.write_sidecar(&mut w)?;
                    w.flush()?;
                    Ok(files)
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(SdfVideoIndex {
                video: vs.id.clone(),
                width: vs.camera.width,
                height: vs.camera.height,
                frames,
            })
        })
        .collect::<Result<_, _>>()?;
    let n: usize = videos.iter().map(|v| v.frames.len()).sum();
    write_pretty(&root.join("sdf/index.json"), &SdfIndex { params, videos })?;
    Ok(format!("{n} SDF frames for {} videos", scenes.len()))
}

pub fn similarity_metric(config: &PipelineConfig) -> Result<SimilarityMetric, BoxError> {
    match config.ingest.as_ref().and_then(|i| i.embeddings.as_ref()) {
        None => Ok(SimilarityMetric::BuiltinLuminanceCosine),
        Some(path) => {
            let f = fs::File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
            Ok(SimilarityMetric::ExternalEmbeddingTable(EmbeddingTable::parse(BufReader::new(f))?))
        }
    }
}

fn stage_build_bench(root: &Path, config: &PipelineConfig) -> Result<String, BoxError> {
    let seqs = load_sequences(root)?;
    let metric = similarity_metric(config)?;
    let bench = build_benchmark(&seqs, &metric, &config.bench)?;
    bench.write(&root.join("bench"))?;
    let c = bench.counts();
    Ok(format!(
        "{} NFS items, {} TCV items ({} corrupted), {} skipped",
        c.nfs, c.tcv, c.tcv_corrupted, c.skipped
    ))
}

pub fn read_sdf_index(root: &Path) -> io::Result<SdfIndex> {
    serde_json::from_reader(BufReader::new(fs::File::open(root.join("sdf/index.json"))?)).map_err(io::Error::other)
}

fn load_sdf_videos(root: &Path) -> Result<Vec<SdfVideo>, BoxError> {
    let index = read_sdf_index(root)?;
    index
        .videos
        .into_par_iter()
        .map(|v| {
            let images = v
                .frames
                .par_iter()
                .map(|f| -> Result<Arc<RgbImage>, BoxError> {
                    let p = root.join(&f.png);
                    Ok(Arc::new(image::open(&p).map_err(|e| format!("{}: {e}", p.display()))?.to_rgb8()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(SdfVideo {
                video: v.video,
                paths: v.frames.into_iter().map(|f| f.png).collect(),
                images,
            })
        })
        .collect()
}

fn stage_emit_sft(root: &Path, config: &PipelineConfig) -> Result<String, BoxError> {
    if !root.join("bench/nfs.jsonl").exists() {
        return Err("bench/nfs.jsonl is missing; run build-bench first".into());
    }
    let nfs: Vec<NfsItem> = read_jsonl_file(&root.join("bench/nfs.jsonl"))?;
    let tcv: Vec<TcvItem> = read_jsonl_file(&root.join("bench/tcv.jsonl"))?;
    let sdf = load_sdf_videos(root)?;
    let src = SftSources {
        nfs: &nfs,
        tcv: &tcv,
        sdf: &sdf,
    };
    let ds = emit_sft_dataset(root, &src, &config.bench, &config.sft, config.seed)?;
    let per_task: Vec<String> = ds
        .summary
        .tasks
        .iter()
        .map(|t| format!("{} {}", t.task.name(), t.emitted))
        .collect();
    Ok(format!(
        "{} SFT items ({}); mix expert {} / self {}",
        ds.items.len(),
        per_task.join(", "),
        ds.mix.expert_count,
        ds.mix.self_count
    ))
}
