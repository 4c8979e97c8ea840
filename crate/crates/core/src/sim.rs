//! Desk-scale damped particle fluid.
//!
//! Particles do not interact with each other. Each step applies gravity and a
//! per-step damping factor (semi-implicit Euler), then resolves collisions
//! against an axis-aligned container, then lets the emitter spawn its quota.
//! Every random draw is keyed on `(scene seed, step index)`, so [`step`] is a
//! pure function of its inputs and a whole run is reproducible from the seed.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::{derive_seed, rng_from_seed};

pub type Vec3 = nalgebra::Vector3<f64>;

/// Particle counts below this are stepped on the calling thread.
const PAR_THRESHOLD: usize = 2048;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("simulation diverged at step {step}: non-finite particle state")]
    Diverged { step: u32 },
    #[error("invalid scene: {0}")]
    InvalidScene(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub position: Vec3,
    pub velocity: Vec3,
}

impl Particle {
    pub fn new(position: Vec3, velocity: Vec3) -> Self {
        Self { position, velocity }
    }

    pub fn kinetic_energy(&self) -> f64 {
        0.5 * self.velocity.norm_squared()
    }
}

/// Axis-aligned box in meters, walls inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    pub fn clamp(&self, p: &Vec3) -> Vec3 {
        Vec3::new(
            p.x.clamp(self.min.x, self.max.x),
            p.y.clamp(self.min.y, self.max.y),
            p.z.clamp(self.min.z, self.max.z),
        )
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViscosityPreset {
    Low,
    Medium,
    High,
}

impl ViscosityPreset {
    pub const ALL: [ViscosityPreset; 3] = [Self::Low, Self::Medium, Self::High];

    /// Per-step damping coefficient. Water-, oil- and honey-like.
    pub fn damping(self) -> f64 {
        match self {
            Self::Low => 0.01,
            Self::Medium => 0.05,
            Self::High => 0.20,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Low => "low",
            Self::Medium => "medium",
            Self::High => "high",
        }
    }
}

/// Either a named preset or an explicit damping coefficient in `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Viscosity {
    Preset(ViscosityPreset),
    Damping(f64),
}

impl Viscosity {
    pub fn damping(&self) -> f64 {
        match self {
            Viscosity::Preset(p) => p.damping(),
            Viscosity::Damping(g) => *g,
        }
    }
}

impl From<ViscosityPreset> for Viscosity {
    fn from(p: ViscosityPreset) -> Self {
        Viscosity::Preset(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackgroundPreset {
    Blank,
    Indoor,
    Outdoor,
}

impl BackgroundPreset {
    pub const ALL: [BackgroundPreset; 3] = [Self::Blank, Self::Indoor, Self::Outdoor];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Emitter {
    pub position: Vec3,
    pub direction: Vec3,
    /// m/s
    pub speed: f64,
    /// particles spawned per step
    pub rate: u32,
    /// Emitter shuts off after this many steps; `None` keeps it on.
    #[serde(default)]
    pub active_steps: Option<u32>,
    /// Half-width of the cubic spawn region, meters.
    #[serde(default)]
    pub position_jitter: f64,
    /// Half-width of the per-component velocity jitter, m/s.
    #[serde(default)]
    pub velocity_jitter: f64,
}

impl Emitter {
    pub fn inactive(position: Vec3) -> Self {
        Self {
            position,
            direction: Vec3::new(0.0, -1.0, 0.0),
            speed: 0.0,
            rate: 0,
            active_steps: None,
            position_jitter: 0.0,
            velocity_jitter: 0.0,
        }
    }

    fn active_at(&self, step: u32) -> bool {
        self.rate > 0 && self.active_steps.is_none_or(|n| step <= n)
    }
}

/// Particles placed in the container before the first step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialFill {
    pub count: u32,
    pub region: Aabb,
    /// Tangential speed about the vertical axis through the region center, m/s.
    #[serde(default)]
    pub swirl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScene {
    pub container: Aabb,
    pub emitter: Emitter,
    pub gravity: Vec3,
    pub viscosity: Viscosity,
    pub restitution: f64,
    /// seconds
    pub dt: f64,
    pub steps: u32,
    pub seed: u64,
    /// Speed cap, m/s.
    pub v_max: f64,
    pub liquid_color: [u8; 3],
    pub background: BackgroundPreset,
    #[serde(default)]
    pub initial_fill: Option<InitialFill>,
}

impl SimScene {
    pub fn damping(&self) -> f64 {
        self.viscosity.damping()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidScene(msg));
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad(format!("dt must be > 0, got {}", self.dt));
        }
        let g = self.damping();
        if !(0.0..1.0).contains(&g) {
            return bad(format!("damping must lie in [0, 1), got {g}"));
        }
        if !(0.0..=1.0).contains(&self.restitution) {
            return bad(format!(
                "restitution must lie in [0, 1], got {}",
                self.restitution
            ));
        }
        if !(self.v_max.is_finite() && self.v_max > 0.0) {
            return bad(format!("v_max must be > 0, got {}", self.v_max));
        }
        let c = &self.container;
        if (0..3).any(|k| !(c.min[k].is_finite() && c.max[k].is_finite() && c.min[k] < c.max[k])) {
            return bad("container must have min < max on every axis".into());
        }
        if !c.contains(&self.emitter.position) {
            return bad("emitter position lies outside the container".into());
        }
        if self.emitter.rate > 0 && self.emitter.direction.norm() == 0.0 {
            return bad("emitter direction must be non-zero".into());
        }
        if !(self.emitter.speed >= 0.0 && self.emitter.speed.is_finite()) {
            return bad("emitter speed must be finite and >= 0".into());
        }
        if self.emitter.position_jitter < 0.0 || self.emitter.velocity_jitter < 0.0 {
            return bad("jitter must be >= 0".into());
        }
        if !self.gravity.iter().all(|x| x.is_finite()) {
            return bad("gravity must be finite".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleSnapshot {
    pub step: u32,
    /// seconds
    pub time: f64,
    pub particles: Vec<Particle>,
}

impl ParticleSnapshot {
    pub fn empty() -> Self {
        Self {
            step: 0,
            time: 0.0,
            particles: Vec::new(),
        }
    }

    pub fn kinetic_energy(&self) -> f64 {
        self.particles.iter().map(Particle::kinetic_energy).sum()
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }
}

fn cap_speed(v: Vec3, v_max: f64) -> Vec3 {
    let n = v.norm();
    if n > v_max {
        v * (v_max / n)
    } else {
        v
    }
}

fn integrate(p: &Particle, scene: &SimScene, keep: f64) -> Particle {
    let dt = scene.dt;
    let velocity = cap_speed((p.velocity + scene.gravity * dt) * keep, scene.v_max);
    let mut position = p.position + velocity * dt;
    let mut velocity = velocity;
    let c = &scene.container;
    for k in 0..3 {
        if position[k] < c.min[k] {
            position[k] = c.min[k];
            if velocity[k] < 0.0 {
                velocity[k] = -velocity[k] * scene.restitution;
            }
        } else if position[k] > c.max[k] {
            position[k] = c.max[k];
            if velocity[k] > 0.0 {
                velocity[k] = -velocity[k] * scene.restitution;
            }
        }
    }
    Particle { position, velocity }
}

fn is_finite(p: &Particle) -> bool {
    p.position.iter().chain(p.velocity.iter()).all(|x| x.is_finite())
}

/// The state before the first step: the optional initial fill, nothing else.
pub fn initial_state(scene: &SimScene) -> ParticleSnapshot {
    let mut particles = Vec::new();
    if let Some(fill) = &scene.initial_fill {
        let mut rng = rng_from_seed(derive_seed(scene.seed, &["fill".into()]));
        let center = fill.region.center();
        for _ in 0..fill.count {
            let p = Vec3::from_fn(|k, _| {
                let (lo, hi) = (fill.region.min[k], fill.region.max[k]);
                if lo < hi {
                    rng.random_range(lo..=hi)
                } else {
                    lo
                }
            });
            let p = scene.container.clamp(&p);
            let radial = Vec3::new(p.x - center.x, 0.0, p.z - center.z);
            let v = if fill.swirl != 0.0 && radial.norm() > 0.0 {
                // counter-clockwise seen from above
                Vec3::new(-radial.z, 0.0, radial.x).normalize() * fill.swirl
            } else {
                Vec3::zeros()
            };
            particles.push(Particle::new(p, cap_speed(v, scene.v_max)));
        }
    }
    ParticleSnapshot {
        step: 0,
        time: 0.0,
        particles,
    }
}

fn spawn(scene: &SimScene, step: u32, out: &mut Vec<Particle>) {
    let e = &scene.emitter;
    if !e.active_at(step) {
        return;
    }
    let mut rng = rng_from_seed(derive_seed(scene.seed, &["emit".into(), step.into()]));
    let dir = e.direction.normalize();
    let mut jitter = |h: f64| {
        if h > 0.0 {
            rng.random_range(-h..=h)
        } else {
            // draw anyway so the stream is independent of jitter settings
            let _: f64 = rng.random();
            0.0
        }
    };
    for _ in 0..e.rate {
        let dp = Vec3::new(
            jitter(e.position_jitter),
            jitter(e.position_jitter),
            jitter(e.position_jitter),
        );
        let dv = Vec3::new(
            jitter(e.velocity_jitter),
            jitter(e.velocity_jitter),
            jitter(e.velocity_jitter),
        );
        let position = scene.container.clamp(&(e.position + dp));
        let velocity = cap_speed(dir * e.speed + dv, scene.v_max);
        out.push(Particle { position, velocity });
    }
}

/// Advance one step: `v' = (1-γ)(v + g dt)`, `p' = p + v' dt`, then wall
/// collisions, then emission.
pub fn step(state: &ParticleSnapshot, scene: &SimScene) -> Result<ParticleSnapshot, SimError> {
    let keep = 1.0 - scene.damping();
    let next_step = state.step + 1;
    let mut particles: Vec<Particle> = if state.particles.len() >= PAR_THRESHOLD {
        state
            .particles
            .par_iter()
            .map(|p| integrate(p, scene, keep))
            .collect()
    } else {
        state
            .particles
            .iter()
            .map(|p| integrate(p, scene, keep))
            .collect()
    };
    spawn(scene, next_step, &mut particles);
    if !particles.iter().all(is_finite) {
        return Err(SimError::Diverged { step: next_step });
    }
    Ok(ParticleSnapshot {
        step: next_step,
        time: next_step as f64 * scene.dt,
        particles,
    })
}

/// Run a scene: returns `steps + 1` snapshots, the initial state first.
pub fn simulate(scene: &SimScene) -> Result<Vec<ParticleSnapshot>, SimError> {
    scene.validate()?;
    let mut out = Vec::with_capacity(scene.steps as usize + 1);
    let mut state = initial_state(scene);
    if !state.particles.iter().all(is_finite) {
        return Err(SimError::Diverged { step: 0 });
    }
    for _ in 0..scene.steps {
        let next = step(&state, scene)?;
        out.push(std::mem::replace(&mut state, next));
    }
    out.push(state);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bare_scene(damping: f64) -> SimScene {
        SimScene {
            container: Aabb::new(Vec3::new(-10.0, -10.0, -10.0), Vec3::new(10.0, 10.0, 10.0)),
            emitter: Emitter::inactive(Vec3::zeros()),
            gravity: Vec3::new(0.0, -9.8, 0.0),
            viscosity: Viscosity::Damping(damping),
            restitution: 0.5,
            dt: 0.1,
            steps: 10,
            seed: 1,
            v_max: 100.0,
            liquid_color: [40, 90, 200],
            background: BackgroundPreset::Blank,
            initial_fill: None,
        }
    }

    fn single(p: Vec3, v: Vec3) -> ParticleSnapshot {
        ParticleSnapshot {
            step: 0,
            time: 0.0,
            particles: vec![Particle::new(p, v)],
        }
    }

    #[test]
    fn one_undamped_step_by_hand() {
        let scene = bare_scene(0.0);
        let next = step(&single(Vec3::zeros(), Vec3::zeros()), &scene).unwrap();
        let p = next.particles[0];
        assert!((p.velocity - Vec3::new(0.0, -0.98, 0.0)).norm() < 1e-12);
        assert!((p.position - Vec3::new(0.0, -0.098, 0.0)).norm() < 1e-12);
        assert_eq!(next.step, 1);
        assert!((next.time - 0.1).abs() < 1e-15);
    }

    #[test]
    fn damping_halves_post_gravity_velocity() {
        let scene = bare_scene(0.5);
        let next = step(&single(Vec3::zeros(), Vec3::zeros()), &scene).unwrap();
        assert!((next.particles[0].velocity - Vec3::new(0.0, -0.49, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn floor_reflection_scales_by_restitution() {
        let mut scene = bare_scene(0.0);
        scene.gravity = Vec3::zeros();
        scene.container.min.y = 0.0;
        let next = step(&single(Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.0, -2.0, 0.0)), &scene).unwrap();
        let p = next.particles[0];
        assert_eq!(p.velocity.y, 1.0);
        assert_eq!(p.position.y, 0.0);
    }

    #[test]
    fn zero_steps_yields_initial_state_only() {
        let mut scene = bare_scene(0.0);
        scene.steps = 0;
        let snaps = simulate(&scene).unwrap();
        assert_eq!(snaps.len(), 1);
        assert_eq!(snaps[0].step, 0);
    }

    #[test]
    fn non_finite_state_reports_step() {
        let scene = bare_scene(0.0);
        let state = ParticleSnapshot {
            step: 4,
            time: 0.4,
            particles: vec![Particle::new(Vec3::zeros(), Vec3::new(f64::NAN, 0.0, 0.0))],
        };
        assert_eq!(step(&state, &scene), Err(SimError::Diverged { step: 5 }));
    }

    #[test]
    fn validation_rejects_bad_scenes() {
        let mut s = bare_scene(0.0);
        s.dt = 0.0;
        assert!(s.validate().is_err());
        let mut s = bare_scene(1.0);
        assert!(s.validate().is_err());
        s.viscosity = Viscosity::Preset(ViscosityPreset::High);
        assert!(s.validate().is_ok());
        s.emitter.position = Vec3::new(20.0, 0.0, 0.0);
        assert!(s.validate().is_err());
        let mut s = bare_scene(0.0);
        s.restitution = 1.5;
        assert!(s.validate().is_err());
    }

    #[test]
    fn emitter_spawns_quota_inside_container() {
        let mut scene = bare_scene(0.01);
        scene.container = Aabb::new(Vec3::new(-0.5, 0.0, -0.5), Vec3::new(0.5, 1.0, 0.5));
        scene.emitter = Emitter {
            position: Vec3::new(0.0, 0.99, 0.0),
            direction: Vec3::new(0.0, -1.0, 0.0),
            speed: 1.0,
            rate: 5,
            active_steps: Some(3),
            position_jitter: 0.05,
            velocity_jitter: 0.1,
        };
        scene.steps = 6;
        let snaps = simulate(&scene).unwrap();
        let counts: Vec<usize> = snaps.iter().map(|s| s.len()).collect();
        assert_eq!(counts, vec![0, 5, 10, 15, 15, 15, 15]);
        for s in &snaps {
            assert!(s.particles.iter().all(|p| scene.container.contains(&p.position)));
        }
    }

    #[test]
    fn speed_is_capped() {
        let mut scene = bare_scene(0.0);
        scene.v_max = 1.0;
        let next = step(&single(Vec3::zeros(), Vec3::new(5.0, 0.0, 0.0)), &scene).unwrap();
        assert!(next.particles[0].velocity.norm() <= 1.0 + 1e-12);
    }

    #[test]
    fn viscosity_deserializes_from_name_or_number() {
        let v: Viscosity = serde_json::from_str("\"medium\"").unwrap();
        assert_eq!(v.damping(), 0.05);
        let v: Viscosity = serde_json::from_str("0.3").unwrap();
        assert_eq!(v.damping(), 0.3);
    }
}
