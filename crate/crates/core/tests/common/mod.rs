//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdf_forge_core::benchgen::{Frame, FrameSequence, FrameSource, NfsItem, TcvItem, TcvLabel};
use sdf_forge_core::camera::CameraModel;
use sdf_forge_core::sdf::Integrand;
use sdf_forge_core::sim::{Aabb, Particle, ParticleSnapshot, Vec3};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Brute-force field: every (pixel, particle) pair, no culling, no sharing
/// with the production projector.
pub fn oracle_density(
    snap: &ParticleSnapshot,
    cam: &CameraModel,
    kappa: f64,
    alpha: f64,
    radius: f64,
    integrand: Integrand,
) -> Vec<f64> {
    let (w, h) = (cam.width as usize, cam.height as usize);
    let f = (cam.look_at - cam.position).normalize();
    let r = f.cross(&cam.up).normalize();
    let u = r.cross(&f);
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for p in &snap.particles {
                let d = p.position - cam.position;
                let depth = d.dot(&f);
                if depth <= cam.near_plane {
                    continue;
                }
                let px = w as f64 / 2.0 + cam.focal_length * d.dot(&r) / depth;
                let py = h as f64 / 2.0 - cam.focal_length * d.dot(&u) / depth;
                if px < 0.0 || py < 0.0 || px >= w as f64 || py >= h as f64 {
                    continue;
                }
                let (dx, dy) = (x as f64 + 0.5 - px, y as f64 + 0.5 - py);
                let home = x == px.floor() as usize && y == py.floor() as usize;
                if dx * dx + dy * dy > radius * radius && !home {
                    continue;
                }
                let to_cam = cam.position - p.position;
                let dist2 = to_cam.norm_squared();
                let weight = match integrand {
                    Integrand::Speed => p.velocity.norm(),
                    Integrand::Projected => p.velocity.dot(&to_cam.normalize()).max(0.0),
                };
                acc += weight / (1.0 + alpha * dist2);
            }
            out[y * w + x] = kappa * acc;
        }
    }
    out
}

pub fn random_snapshot(rng: &mut impl Rng, container: &Aabb, n: usize, v_max: f64) -> ParticleSnapshot {
    let particles = (0..n)
        .map(|_| {
            let p = Vec3::from_fn(|k, _| rng.random_range(container.min[k]..=container.max[k]));
            let v = Vec3::from_fn(|_, _| rng.random_range(-v_max..=v_max));
            Particle { position: p, velocity: v }
        })
        .collect();
    ParticleSnapshot {
        step: 0,
        time: 0.0,
        particles,
    }
}

/// Camera at a random spot on a shell around the origin, looking at it.
pub fn random_camera(rng: &mut impl Rng, size: u32) -> CameraModel {
    let az: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let el: f64 = rng.random_range(-1.0..1.0);
    let dist = rng.random_range(1.5..4.0);
    CameraModel {
        position: Vec3::new(dist * el.cos() * az.sin(), dist * el.sin(), dist * el.cos() * az.cos()),
        look_at: Vec3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), 0.0),
        up: Vec3::new(0.0, 1.0, 0.0),
        focal_length: rng.random_range(30.0..90.0),
        width: size,
        height: size,
        near_plane: 0.05,
    }
}

/// 32x32 mean-subtracted luminance cosine for images whose sides are
/// multiples of 32.
pub fn oracle_similarity(a: &RgbImage, b: &RgbImage) -> f64 {
    let thumb = |img: &RgbImage| -> Vec<f64> {
        let (bw, bh) = (img.width() as usize / 32, img.height() as usize / 32);
        let mut t = vec![0.0; 32 * 32];
        for (x, y, p) in img.enumerate_pixels() {
            let l = 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
            t[(y as usize / bh) * 32 + x as usize / bw] += l / (bw * bh) as f64;
        }
        let m = t.iter().sum::<f64>() / t.len() as f64;
        t.iter().map(|v| v - m).collect()
    };
    let (ta, tb) = (thumb(a), thumb(b));
    let dot: f64 = ta.iter().zip(&tb).map(|(x, y)| x * y).sum();
    let na: f64 = ta.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = tb.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na < 1e-12 || nb < 1e-12 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// A dark square sweeping across a light frame, so distant frames differ.
pub fn sweep_sequence(video: &str, frames: usize, size: u32, phase: f64) -> FrameSequence {
    let fs = (1..=frames)
        .map(|i| {
            let t = (i as f64 / frames as f64 + phase).fract();
            let cx = (t * size as f64) as i64;
            let cy = ((t * 3.0).fract() * size as f64) as i64;
            let img = RgbImage::from_fn(size, size, |x, y| {
                let (dx, dy) = (x as i64 - cx, y as i64 - cy);
                if dx.abs() < size as i64 / 5 && dy.abs() < size as i64 / 5 {
                    Rgb([20, 40, 120])
                } else {
                    Rgb([220, 220, 220])
                }
            });
            Frame {
                index: i,
                timestamp: (i - 1) as f64 / 30.0,
                id: format!("{video}/{i:04}"),
                path: format!("frames/{video}/{i:04}.png"),
                image: Arc::new(img),
            }
        })
        .collect();
    FrameSequence::new(video, FrameSource::Simulated, fs).unwrap()
}

/// Every violation of NFS well-formedness for one item.
pub fn nfs_violations(item: &NfsItem, context_len: usize, frames: usize, buffer: usize, tau: f64) -> Vec<String> {
    let mut v = Vec::new();
    let gt = item.interval.end + 1;
    let idx = &item.option_indices;
    if idx.len() != 4 || item.options.len() != 4 {
        v.push(format!("{}: {} options", item.id, idx.len()));
        return v;
    }
    let mut sorted = idx.clone();
    sorted.sort();
    sorted.dedup();
    if sorted.len() != 4 {
        v.push(format!("{}: repeated option index", item.id));
    }
    let gts: Vec<usize> = (0..4).filter(|&k| idx[k] == gt).collect();
    if gts.len() != 1 {
        v.push(format!("{}: {} options equal the successor frame", item.id, gts.len()));
    } else if ["A", "B", "C", "D"][gts[0]] != item.answer {
        v.push(format!("{}: answer {} but ground truth at {}", item.id, item.answer, gts[0]));
    }
    if gt > frames {
        v.push(format!("{}: successor {gt} past the end", item.id));
    }
    if item.context.len() != context_len || item.interval.end - item.interval.start + 1 != context_len {
        v.push(format!("{}: context length {}", item.id, item.context.len()));
    }
    let lo = item.interval.start.saturating_sub(buffer).max(1);
    let hi = (item.interval.end + buffer).min(frames);
    for &t in idx.iter().filter(|&&t| t != gt) {
        if (lo..=hi).contains(&t) {
            v.push(format!("{}: distractor {t} inside [{lo}, {hi}]", item.id));
        }
    }
    if item.distractor_sims.len() != 3 || item.distractor_sims.iter().any(|s| !(*s < tau)) {
        v.push(format!("{}: distractor sims {:?}", item.id, item.distractor_sims));
    }
    v
}

pub fn tcv_violations(item: &TcvItem, context_len: usize) -> Vec<String> {
    let mut v = Vec::new();
    let window: Vec<usize> = item.interval.indices().collect();
    let diffs = window.iter().zip(&item.frame_indices).filter(|(a, b)| a != b).count();
    let expected = match item.label {
        TcvLabel::Coherent => 0,
        TcvLabel::Corrupted => 1,
    };
    if diffs != expected {
        v.push(format!("{}: {:?} with {diffs} replaced frames", item.id, item.label));
    }
    if item.frames.len() != context_len {
        v.push(format!("{}: {} frames", item.id, item.frames.len()));
    }
    v
}
