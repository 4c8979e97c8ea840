//! Pipeline configuration (TOML).
//!
//! ```toml
//! seed = 0
//!
//! [sim]
//! videos = 5
//! steps = 59              # frames per video = steps + 1
//! width = 128
//! height = 128
//! dt = 0.0333333
//! particle_radius = 2.0
//! presets = ["pour_low_viscosity", "stir_high_viscosity"]
//!
//! [sdf]                   # kappa, alpha, splat_radius, normalization, integrand
//! [bench]                 # context_len, strides, buffer, tau, tcv_balance
//! [sft]                   # counts, options, mix
//!
//! [ingest]                # optional real-video folders
//! dir = "clips"
//! index = "clips/index.txt"
//! embeddings = "clips/embeddings.txt"
//! ```
//!
//! Every section and key is optional. Relative paths resolve against the
//! config file's directory. The top-level `seed` overrides `bench.seed`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::benchgen::BenchConfig;
use crate::ingest::valid_video_id;
use crate::scenes::{parse_preset, DEFAULT_DT, PRESET_NAMES};
use crate::sdf::SdfParams;
use crate::sftdata::SftConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn default_videos() -> usize {
    5
}
fn default_steps() -> u32 {
    59
}
fn default_size() -> u32 {
    128
}
fn default_dt() -> f64 {
    DEFAULT_DT
}
fn default_radius() -> f64 {
    2.0
}
fn default_presets() -> Vec<String> {
    PRESET_NAMES.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_videos")]
    pub videos: usize,
    #[serde(default = "default_steps")]
    pub steps: u32,
    #[serde(default = "default_size")]
    pub width: u32,
    #[serde(default = "default_size")]
    pub height: u32,
    /// seconds
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// pixels
    #[serde(default = "default_radius")]
    pub particle_radius: f64,
    /// Video `k` uses `presets[k % len]`.
    #[serde(default = "default_presets")]
    pub presets: Vec<String>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            videos: default_videos(),
            steps: default_steps(),
            width: default_size(),
            height: default_size(),
            dt: default_dt(),
            particle_radius: default_radius(),
            presets: default_presets(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestConfig {
    pub dir: PathBuf,
    /// Defaults to `<dir>/index.txt`.
    #[serde(default)]
    pub index: Option<PathBuf>,
    /// `frame-id v1 ... vk` table; switches pruning to the external metric.
    #[serde(default)]
    pub embeddings: Option<PathBuf>,
}

impl IngestConfig {
    pub fn index_path(&self) -> PathBuf {
        self.index.clone().unwrap_or_else(|| self.dir.join("index.txt"))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub sdf: SdfParams,
    #[serde(default)]
    pub bench: BenchConfig,
    #[serde(default)]
    pub sft: SftConfig,
    #[serde(default)]
    pub ingest: Option<IngestConfig>,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let mut c: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        c.bench.seed = c.seed;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut c = Self::from_toml(&text)?;
        if let (Some(ing), Some(base)) = (c.ingest.as_mut(), path.parent()) {
            let fix = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            };
            fix(&mut ing.dir);
            ing.index.as_mut().map(fix);
            ing.embeddings.as_mut().map(fix);
        }
        Ok(c)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.bench.seed = seed;
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let s = &self.sim;
        if !(s.dt.is_finite() && s.dt > 0.0) {
            return bad(format!("sim.dt must be > 0, got {}", s.dt));
        }
        if s.width == 0 || s.height == 0 {
            return bad("sim.width and sim.height must be > 0".into());
        }
        if !(s.particle_radius.is_finite() && s.particle_radius >= 0.0) {
            return bad("sim.particle_radius must be >= 0".into());
        }
        if s.videos > 0 && s.presets.is_empty() {
            return bad("sim.presets must not be empty".into());
        }
        if let Some(p) = s.presets.iter().find(|p| parse_preset(p).is_none()) {
            return bad(format!("unknown preset `{p}` (known: {})", PRESET_NAMES.join(", ")));
        }
        if s.videos == 0 && self.ingest.is_none() {
            return bad("no videos: set sim.videos > 0 or add an [ingest] section".into());
        }
        self.sdf.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.bench.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.sft.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    /// Ids of the simulated videos.
    pub fn sim_video_ids(&self) -> Vec<String> {
        (0..self.sim.videos).map(|k| format!("sim{k:03}")).collect()
    }
}

pub fn check_video_id(id: &str) -> Result<(), ConfigError> {
    if valid_video_id(id) {
        Ok(())
    } else {
        Err(ConfigError::Invalid(format!("invalid video id `{id}`")))
    }
}
