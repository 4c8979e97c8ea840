//! Command-line interface.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration error,
//! 3 malformed prediction log, 4 port already in use.

use std::fs;
use std::io::BufReader;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sdf_forge_core::benchgen::{NfsItem, TcvItem};
use sdf_forge_core::config::{ConfigError, PipelineConfig};
use sdf_forge_core::evalmetrics::{parse_prediction_log, score_nfs, score_tcv, IntervalKind, ScoreError};
use sdf_forge_core::integrity::verify;
use sdf_forge_core::jsonl::read_jsonl_file;
use sdf_forge_core::pipeline::{run_pipeline, run_stage, PipelineError, Stage, StageReport};
use serde_json::Value;

use crate::serve::{serve, ServeError};

#[derive(Debug, Parser)]
#[command(name = "sdf-forge", version, about = "Intuitive-physics benchmark forge")]
pub struct Cli {
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Log verbosity: -v info, -vv debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML pipeline config; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output root.
    #[arg(long, env = "SDF_FORGE_OUT", default_value = "out")]
    pub out: PathBuf,
    /// Global seed, overriding the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Rerun even if outputs are up to date.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate scenes and write traces and RGB frames.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Simulate a single video of this preset.
        #[arg(long)]
        preset: Option<String>,
        /// Steps per video (frames = steps + 1).
        #[arg(long)]
        steps: Option<u32>,
        /// Number of simulated videos.
        #[arg(long)]
        videos: Option<usize>,
    },
    /// Render Scene Dynamic Field images for every simulated frame.
    RenderSdf {
        #[command(flatten)]
        common: Common,
    },
    /// Build NFS and TCV manifests.
    BuildBench {
        #[command(flatten)]
        common: Common,
    },
    /// Emit the multi-task fine-tuning dataset.
    EmitSft {
        #[command(flatten)]
        common: Common,
    },
    /// Run simulate, render-sdf, build-bench and emit-sft in order.
    Pipeline {
        #[command(flatten)]
        common: Common,
    },
    /// Score a prediction log against an NFS or TCV manifest.
    Score {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        /// Inferred from the manifest records when omitted.
        #[arg(long, value_enum)]
        task: Option<Task>,
        #[arg(long, value_enum, default_value_t = Interval::Normal95)]
        interval: Interval,
        /// Directory for `score_<task>.json` and `.txt`; defaults to the
        /// prediction log's directory.
        #[arg(long)]
        report_dir: Option<PathBuf>,
    },
    /// Serve the review API.
    Serve {
        #[arg(long, env = "SDF_FORGE_OUT", default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
    /// Check checksums and manifest references under the output root.
    Verify {
        #[arg(long, env = "SDF_FORGE_OUT", default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Task {
    Nfs,
    Tcv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Interval {
    Normal95,
    None,
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let code = match e {
            PipelineError::Config(_) => 2,
            _ => 1,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::new(2, e.to_string())
    }
}

fn load_config(common: &Common) -> Result<PipelineConfig, Failure> {
    let mut config = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.set_seed(seed);
    }
    Ok(config)
}

fn print_reports(reports: &[StageReport]) {
    for r in reports {
        let state = if r.skipped { "skipped" } else { "done" };
        println!("{:<12} {state:<8} {}", r.stage.name(), r.summary);
    }
}

fn run_one(common: &Common, config: &PipelineConfig, stage: Stage) -> Result<(), Failure> {
    config.validate()?;
    fs::create_dir_all(&common.out).map_err(|e| Failure::new(1, format!("{}: {e}", common.out.display())))?;
    let t = Instant::now();
    let r = run_stage(&common.out, config, stage, common.force)?;
    print_reports(&[r]);
    println!("elapsed {:.2}s", t.elapsed().as_secs_f64());
    Ok(())
}

fn infer_task(manifest: &Path) -> Result<Task, Failure> {
    let text = fs::read_to_string(manifest).map_err(|e| Failure::new(1, format!("{}: {e}", manifest.display())))?;
    let first = text.lines().find(|l| !l.trim().is_empty());
    let Some(first) = first else {
        return Err(Failure::new(2, "empty manifest; pass --task"));
    };
    let v: Value = serde_json::from_str(first)
        .map_err(|e| Failure::new(2, format!("{} line 1: {e}", manifest.display())))?;
    if v.get("options").is_some() {
        Ok(Task::Nfs)
    } else if v.get("label").is_some() {
        Ok(Task::Tcv)
    } else {
        Err(Failure::new(2, "cannot tell the manifest's task; pass --task"))
    }
}

fn cmd_score(
    manifest: &Path,
    predictions: &Path,
    task: Option<Task>,
    interval: Interval,
    report_dir: Option<&Path>,
) -> Result<(), Failure> {
    let task = match task {
        Some(t) => t,
        None => infer_task(manifest)?,
    };
    let kind = match interval {
        Interval::Normal95 => IntervalKind::Normal95,
        Interval::None => IntervalKind::None,
    };
    let f = fs::File::open(predictions).map_err(|e| Failure::new(1, format!("{}: {e}", predictions.display())))?;
    let preds = parse_prediction_log(BufReader::new(f)).map_err(|e| match e {
        ScoreError::MalformedLog { line, msg } => {
            Failure::new(3, format!("{}: malformed prediction at line {line}: {msg}", predictions.display()))
        }
        other => Failure::new(1, other.to_string()),
    })?;
    let manifest_err = |e: sdf_forge_core::jsonl::JsonlError| Failure::new(2, format!("{}: {e}", manifest.display()));
    let report = match task {
        Task::Nfs => {
            let items: Vec<NfsItem> = read_jsonl_file(manifest).map_err(manifest_err)?;
            score_nfs(&items, &preds, kind)
        }
        Task::Tcv => {
            let items: Vec<TcvItem> = read_jsonl_file(manifest).map_err(manifest_err)?;
            score_tcv(&items, &preds, kind)
        }
    }
    .map_err(|e| match e {
        ScoreError::AmbiguousLog { .. } => Failure::new(3, e.to_string()),
        other => Failure::new(1, other.to_string()),
    })?;
    let dir = report_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| predictions.parent().map(Path::to_path_buf).unwrap_or_default());
    let dir = if dir.as_os_str().is_empty() { PathBuf::from(".") } else { dir };
    let io = |e: std::io::Error| Failure::new(1, format!("{}: {e}", dir.display()));
    fs::create_dir_all(&dir).map_err(io)?;
    let text = report.to_text();
    let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
    json.push('\n');
    fs::write(dir.join(format!("score_{}.json", report.task)), json).map_err(io)?;
    fs::write(dir.join(format!("score_{}.txt", report.task)), &text).map_err(io)?;
    print!("{text}");
    Ok(())
}

fn cmd_verify(out: &Path) -> Result<(), Failure> {
    let r = verify(out).map_err(|e| Failure::new(1, format!("{}: {e}", out.display())))?;
    for p in &r.missing {
        println!("missing     {p}");
    }
    for p in &r.mismatched {
        println!("mismatch    {p}");
    }
    for p in &r.unlisted {
        println!("unlisted    {p}");
    }
    for (m, p) in &r.dangling {
        println!("dangling    {p} (referenced by {m})");
    }
    if r.is_ok() {
        println!("ok: {} files verified", r.checked);
        Ok(())
    } else {
        Err(Failure::new(1, "verification failed"))
    }
}

fn cmd_serve(out: &Path, addr: SocketAddr) -> Result<(), Failure> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure::new(1, e.to_string()))?;
    rt.block_on(serve(out, addr)).map_err(|e| match e {
        ServeError::AddrInUse(_) => Failure::new(4, e.to_string()),
        ServeError::Load(_) => Failure::new(2, e.to_string()),
        ServeError::Io(_) => Failure::new(1, e.to_string()),
    })
}

pub fn execute(cli: Cli) -> Result<(), Failure> {
    if let Some(j) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build_global()
            .map_err(|e| Failure::new(1, e.to_string()))?;
    }
    match cli.command {
        Command::Simulate {
            common,
            preset,
            steps,
            videos,
        } => {
            let mut config = load_config(&common)?;
            if let Some(p) = preset {
                config.sim.presets = vec![p];
                config.sim.videos = videos.unwrap_or(1);
            } else if let Some(v) = videos {
                config.sim.videos = v;
            }
            if let Some(s) = steps {
                config.sim.steps = s;
            }
            run_one(&common, &config, Stage::Simulate)
        }
        Command::RenderSdf { common } => run_one(&common, &load_config(&common)?, Stage::RenderSdf),
        Command::BuildBench { common } => run_one(&common, &load_config(&common)?, Stage::BuildBench),
        Command::EmitSft { common } => run_one(&common, &load_config(&common)?, Stage::EmitSft),
        Command::Pipeline { common } => {
            let config = load_config(&common)?;
            config.validate()?;
            fs::create_dir_all(&common.out).map_err(|e| Failure::new(1, format!("{}: {e}", common.out.display())))?;
            let t = Instant::now();
            let reports = run_pipeline(&common.out, &config, common.force)?;
            print_reports(&reports);
            println!("elapsed {:.2}s", t.elapsed().as_secs_f64());
            Ok(())
        }
        Command::Score {
            manifest,
            predictions,
            task,
            interval,
            report_dir,
        } => cmd_score(&manifest, &predictions, task, interval, report_dir.as_deref()),
        Command::Serve { out, addr } => cmd_serve(&out, addr),
        Command::Verify { out } => cmd_verify(&out),
    }
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
