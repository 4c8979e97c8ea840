//! Named scene presets: `pour_*` and `stir_*` at three viscosities.

use serde::{Deserialize, Serialize};

use crate::sim::{Aabb, BackgroundPreset, Emitter, InitialFill, SimScene, Vec3, ViscosityPreset};

pub const PRESET_NAMES: [&str; 6] = [
    "pour_low_viscosity",
    "pour_medium_viscosity",
    "pour_high_viscosity",
    "stir_low_viscosity",
    "stir_medium_viscosity",
    "stir_high_viscosity",
];

pub const DEFAULT_DT: f64 = 1.0 / 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneKind {
    Pour,
    Stir,
}

pub fn parse_preset(name: &str) -> Option<(SceneKind, ViscosityPreset)> {
    let (kind, visc) = name.split_once('_')?;
    let kind = match kind {
        "pour" => SceneKind::Pour,
        "stir" => SceneKind::Stir,
        _ => return None,
    };
    let visc = match visc {
        "low_viscosity" => ViscosityPreset::Low,
        "medium_viscosity" => ViscosityPreset::Medium,
        "high_viscosity" => ViscosityPreset::High,
        _ => return None,
    };
    Some((kind, visc))
}

pub fn container() -> Aabb {
    Aabb::new(Vec3::new(-0.5, 0.0, -0.3), Vec3::new(0.5, 0.8, 0.3))
}

/// Base scene for a preset; callers vary color, background and emitter
/// parameters per video.
pub fn preset_scene(kind: SceneKind, viscosity: ViscosityPreset, steps: u32, seed: u64) -> SimScene {
    let container = container();
    let (emitter, initial_fill, restitution) = match kind {
        SceneKind::Pour => (
            Emitter {
                position: Vec3::new(-0.35, 0.72, 0.0),
                direction: Vec3::new(0.45, -1.0, 0.0),
                speed: 1.4,
                rate: 14,
                active_steps: None,
                position_jitter: 0.025,
                velocity_jitter: 0.12,
            },
            None,
            0.35,
        ),
        SceneKind::Stir => (
            Emitter {
                position: Vec3::new(0.0, 0.75, 0.0),
                direction: Vec3::new(0.0, -1.0, 0.0),
                speed: 0.8,
                rate: 4,
                active_steps: None,
                position_jitter: 0.05,
                velocity_jitter: 0.3,
            },
            Some(InitialFill {
                count: 500,
                region: Aabb::new(Vec3::new(-0.4, 0.05, -0.25), Vec3::new(0.4, 0.45, 0.25)),
                swirl: 2.2,
            }),
            0.7,
        ),
    };
    SimScene {
        container,
        emitter,
        gravity: Vec3::new(0.0, -9.8, 0.0),
        viscosity: viscosity.into(),
        restitution,
        dt: DEFAULT_DT,
        steps,
        seed,
        v_max: 6.0,
        liquid_color: [40, 90, 200],
        background: BackgroundPreset::Blank,
        initial_fill,
    }
}

pub fn named_scene(name: &str, steps: u32, seed: u64) -> Option<SimScene> {
    let (kind, visc) = parse_preset(name)?;
    Some(preset_scene(kind, visc, steps, seed))
}
