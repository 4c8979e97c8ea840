//! RGB frame rendering: flat or gradient backgrounds with disc-splatted particles.

use image::{Rgb, RgbImage};

use crate::camera::{CameraError, CameraModel};
use crate::sim::{BackgroundPreset, ParticleSnapshot, SimScene};

/// Default radius of a rendered particle disc, in pixels.
pub const DEFAULT_PARTICLE_RADIUS: f64 = 2.0;

fn lerp(a: [u8; 3], b: [u8; 3], t: f64) -> Rgb<u8> {
    let mix = |x: u8, y: u8| (x as f64 + (y as f64 - x as f64) * t).round() as u8;
    Rgb([mix(a[0], b[0]), mix(a[1], b[1]), mix(a[2], b[2])])
}

/// Indoor and outdoor vary in hue at nearly constant luminance, so the
/// liquid dominates luminance-based frame similarity.
pub fn background(preset: BackgroundPreset, width: u32, height: u32) -> RgbImage {
    let h = height.max(1) as f64;
    match preset {
        BackgroundPreset::Blank => RgbImage::from_pixel(width, height, Rgb([236, 236, 236])),
        BackgroundPreset::Indoor => RgbImage::from_fn(width, height, |_, y| {
            let t = y as f64 / h;
            if t < 0.68 {
                // wall
                lerp([214, 192, 160], [196, 196, 188], t / 0.68)
            } else {
                // tabletop
                lerp([232, 188, 150], [222, 190, 170], (t - 0.68) / 0.32)
            }
        }),
        BackgroundPreset::Outdoor => RgbImage::from_fn(width, height, |_, y| {
            let t = y as f64 / h;
            if t < 0.6 {
                lerp([140, 196, 250], [180, 190, 205], t / 0.6)
            } else {
                lerp([160, 210, 130], [176, 204, 110], (t - 0.6) / 0.4)
            }
        }),
    }
}

/// Whether pixel `(x, y)` is covered by a disc of `radius` pixels centered at
/// image point `(u, v)`: its center lies within `radius`, or it is the pixel
/// containing `(u, v)`.
#[inline]
pub fn disc_covers(u: f64, v: f64, radius: f64, x: i64, y: i64) -> bool {
    let dx = x as f64 + 0.5 - u;
    let dy = y as f64 + 0.5 - v;
    dx * dx + dy * dy <= radius * radius || (x == u.floor() as i64 && y == v.floor() as i64)
}

/// Paint a filled disc of `radius` pixels centered at image point `(u, v)`.
pub fn fill_disc(img: &mut RgbImage, u: f64, v: f64, radius: f64, color: Rgb<u8>) {
    let (w, h) = img.dimensions();
    let r = radius.max(0.0);
    let x0 = (u - r - 1.0).floor().max(0.0) as i64;
    let y0 = (v - r - 1.0).floor().max(0.0) as i64;
    let x1 = ((u + r + 1.0).ceil() as i64).min(w as i64 - 1);
    let y1 = ((v + r + 1.0).ceil() as i64).min(h as i64 - 1);
    for y in y0..=y1 {
        for x in x0..=x1 {
            if disc_covers(u, v, r, x, y) {
                img.put_pixel(x as u32, y as u32, color);
            }
        }
    }
}

/// Render the RGB frame of a snapshot. Particles behind the near plane are
/// skipped.
pub fn emit_rgb(
    snapshot: &ParticleSnapshot,
    camera: &CameraModel,
    scene: &SimScene,
    particle_radius: f64,
) -> Result<RgbImage, CameraError> {
    let proj = camera.projector()?;
    let mut img = background(scene.background, camera.width, camera.height);
    let color = Rgb(scene.liquid_color);
    for p in &snapshot.particles {
        if let Some(pr) = proj.project(&p.position) {
            fill_disc(&mut img, pr.u, pr.v, particle_radius, color);
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{Aabb, Emitter, Particle, Vec3, Viscosity};

    #[test]
    fn backgrounds_are_near_isoluminant() {
        for preset in BackgroundPreset::ALL {
            let img = background(preset, 8, 64);
            let lum: Vec<f64> = img
                .pixels()
                .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
                .collect();
            let lo = lum.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = lum.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(hi - lo < 4.0, "{preset:?}: {lo}..{hi}");
        }
    }

    fn scene() -> SimScene {
        SimScene {
            container: Aabb::new(Vec3::new(-1.0, -1.0, -1.0), Vec3::new(1.0, 1.0, 1.0)),
            emitter: Emitter::inactive(Vec3::zeros()),
            gravity: Vec3::zeros(),
            viscosity: Viscosity::Damping(0.0),
            restitution: 0.5,
            dt: 0.1,
            steps: 1,
            seed: 0,
            v_max: 10.0,
            liquid_color: [200, 20, 20],
            background: BackgroundPreset::Outdoor,
            initial_fill: None,
        }
    }

    fn camera() -> CameraModel {
        CameraModel {
            position: Vec3::new(0.0, 0.0, 5.0),
            look_at: Vec3::zeros(),
            up: Vec3::new(0.0, 1.0, 0.0),
            focal_length: 40.0,
            width: 32,
            height: 32,
            near_plane: 0.1,
        }
    }

    #[test]
    fn empty_snapshot_is_background() {
        let img = emit_rgb(&ParticleSnapshot::empty(), &camera(), &scene(), 2.0).unwrap();
        assert_eq!(img, background(BackgroundPreset::Outdoor, 32, 32));
    }

    #[test]
    fn axis_particle_lands_on_center_pixel() {
        let snap = ParticleSnapshot {
            step: 0,
            time: 0.0,
            particles: vec![Particle::new(Vec3::zeros(), Vec3::zeros())],
        };
        let img = emit_rgb(&snap, &camera(), &scene(), 2.0).unwrap();
        assert_eq!(img.get_pixel(16, 16), &Rgb([200, 20, 20]));
        assert_eq!(img.get_pixel(15, 15), &Rgb([200, 20, 20]));
        // outside the disc
        assert_ne!(img.get_pixel(16, 20), &Rgb([200, 20, 20]));
    }

    #[test]
    fn particles_behind_camera_are_skipped() {
        let snap = ParticleSnapshot {
            step: 0,
            time: 0.0,
            particles: vec![Particle::new(Vec3::new(0.0, 0.0, 9.0), Vec3::zeros())],
        };
        let img = emit_rgb(&snap, &camera(), &scene(), 2.0).unwrap();
        assert_eq!(img, background(BackgroundPreset::Outdoor, 32, 32));
    }

    #[test]
    fn zero_radius_still_marks_home_pixel() {
        let mut img = RgbImage::new(4, 4);
        fill_disc(&mut img, 1.2, 2.7, 0.0, Rgb([1, 2, 3]));
        let marked: Vec<_> = img
            .enumerate_pixels()
            .filter(|(_, _, p)| p.0 == [1, 2, 3])
            .map(|(x, y, _)| (x, y))
            .collect();
        assert_eq!(marked, vec![(1, 2)]);
    }
}
