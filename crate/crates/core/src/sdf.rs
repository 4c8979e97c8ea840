//! Scene Dynamic Field rendering.
//!
//! The blue-channel density at a pixel is the attenuated sum of particle
//! speeds over the particles whose splat disc covers that pixel:
//!
//! ```text
//! D_B(pixel) = kappa * sum_i  w_i / (1 + alpha * |c - p_i|^2)
//! ```
//!
//! with `w_i = |v_i|` ([`Integrand::Speed`]) or `w_i = max(0, v_i . r_i)`
//! ([`Integrand::Projected`]), where `r_i` is the unit vector from the particle
//! towards the camera at `c`. Only particles inside the view frustum count.

use std::io::{self, Write};

use image::{Rgb, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{CameraError, CameraModel, Projection};
use crate::raster::disc_covers;
use crate::sim::{Particle, ParticleSnapshot, Vec3};

/// Grayscale multiplier applied to the RGB frame under the blue overlay.
pub const BASE_DIM: f64 = 0.35;

#[derive(Debug, Error, PartialEq)]
pub enum SdfError {
    #[error("degenerate geometry: particle coincides with the camera")]
    DegenerateGeometry,
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error("invalid SDF parameters: {0}")]
    InvalidParams(String),
    #[error("pixel ({0}, {1}) lies outside the image")]
    PixelOutOfRange(u32, u32),
    #[error("base image is {0}x{1}, SDF is {2}x{3}")]
    BaseSizeMismatch(u32, u32, u32, u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrand {
    /// `|v_i|`
    Speed,
    /// `max(0, v_proj)`; receding particles contribute nothing.
    Projected,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Normalization {
    /// Divide by `kappa * v_ref`, so frames of one video share a scale.
    FixedMax { v_ref: f64 },
    /// Divide by the frame's own maximum density.
    PerFrameMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdfParams {
    pub kappa: f64,
    /// 1/m^2
    pub alpha: f64,
    /// pixels
    pub splat_radius: f64,
    pub normalization: Normalization,
    pub integrand: Integrand,
}

impl Default for SdfParams {
    fn default() -> Self {
        Self {
            kappa: 1.0,
            alpha: 0.5,
            splat_radius: 2.0,
            normalization: Normalization::PerFrameMax,
            integrand: Integrand::Speed,
        }
    }
}

impl SdfParams {
    pub fn validate(&self) -> Result<(), SdfError> {
        let bad = |m: String| Err(SdfError::InvalidParams(m));
        if !(self.kappa.is_finite() && self.kappa > 0.0) {
            return bad(format!("kappa must be > 0, got {}", self.kappa));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return bad(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if !(self.splat_radius.is_finite() && self.splat_radius >= 0.0) {
            return bad(format!("splat_radius must be >= 0, got {}", self.splat_radius));
        }
        if let Normalization::FixedMax { v_ref } = self.normalization {
            if !(v_ref.is_finite() && v_ref > 0.0) {
                return bad(format!("v_ref must be > 0, got {v_ref}"));
            }
        }
        Ok(())
    }
}

/// Component of `v` along the unit vector from `p` towards the camera at `c`.
/// Positive when the particle moves towards the camera.
pub fn project_velocity(v: &Vec3, p: &Vec3, c: &Vec3) -> Result<f64, SdfError> {
    let r = c - p;
    let n = r.norm();
    if n == 0.0 {
        return Err(SdfError::DegenerateGeometry);
    }
    Ok(v.dot(&(r / n)))
}

/// One particle's attenuated contribution, before the `kappa` scale.
fn contribution(p: &Particle, c: &Vec3, params: &SdfParams) -> f64 {
    let r = c - p.position;
    let d2 = r.norm_squared();
    let w = match params.integrand {
        Integrand::Speed => p.velocity.norm(),
        Integrand::Projected => {
            // d2 > 0 for any particle past the near plane
            let n = d2.sqrt();
            p.velocity.dot(&(r / n)).max(0.0)
        }
    };
    w / (1.0 + params.alpha * d2)
}

/// Blue-channel density at one pixel, evaluated directly from the snapshot.
pub fn blue_density(
    pixel: (u32, u32),
    snapshot: &ParticleSnapshot,
    camera: &CameraModel,
    params: &SdfParams,
) -> Result<f64, SdfError> {
    params.validate()?;
    let proj = camera.projector()?;
    if pixel.0 >= camera.width || pixel.1 >= camera.height {
        return Err(SdfError::PixelOutOfRange(pixel.0, pixel.1));
    }
    let c = proj.position();
    let mut sum = 0.0;
    for p in &snapshot.particles {
        if let Some(pr) = proj.project_in_view(&p.position) {
            if disc_covers(pr.u, pr.v, params.splat_radius, pixel.0 as i64, pixel.1 as i64) {
                sum += contribution(p, &c, params);
            }
        }
    }
    Ok(params.kappa * sum)
}

/// A rendered field: raw per-pixel densities plus the normalizer used for
/// quantization.
#[derive(Debug, Clone, PartialEq)]
pub struct SdfImage {
    width: u32,
    height: u32,
    density: Vec<f64>,
    normalizer: f64,
}

impl SdfImage {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Row-major densities.
    pub fn densities(&self) -> &[f64] {
        &self.density
    }

    pub fn density_at(&self, x: u32, y: u32) -> f64 {
        self.density[(y * self.width + x) as usize]
    }

    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    /// `density / normalizer` before clamping; zero when the normalizer is zero.
    pub fn intensity_at(&self, x: u32, y: u32) -> f64 {
        if self.normalizer > 0.0 {
            self.density_at(x, y) / self.normalizer
        } else {
            0.0
        }
    }

    /// Quantized blue value over a base gray level `floor`.
    pub fn blue_over(&self, x: u32, y: u32, floor: u8) -> u8 {
        let t = self.intensity_at(x, y).clamp(0.0, 1.0);
        let f = floor as f64;
        (f + (255.0 - f) * t).round() as u8
    }

    /// First pixel (row-major) holding the maximum density.
    pub fn max_pixel(&self) -> (u32, u32) {
        let mut best = 0usize;
        for (i, &d) in self.density.iter().enumerate() {
            if d > self.density[best] {
                best = i;
            }
        }
        (best as u32 % self.width, best as u32 / self.width)
    }

    /// RGB rendition: a dimmed grayscale of `base` (black when absent) with
    /// the quantized density raising the blue channel.
    pub fn to_rgb(&self, base: Option<&RgbImage>) -> Result<RgbImage, SdfError> {
        if let Some(b) = base {
            if b.dimensions() != (self.width, self.height) {
                return Err(SdfError::BaseSizeMismatch(b.width(), b.height(), self.width, self.height));
            }
        }
        Ok(RgbImage::from_fn(self.width, self.height, |x, y| {
            let g = base.map_or(0u8, |b| {
                let p = b.get_pixel(x, y).0;
                let lum = 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
                (lum * BASE_DIM).round() as u8
            });
            Rgb([g, g, self.blue_over(x, y, g)])
        }))
    }

    /// Raw densities as row-major little-endian `f32`, no header.
    pub fn write_sidecar<W: Write>(&self, mut w: W) -> io::Result<()> {
        let mut buf = Vec::with_capacity(self.density.len() * 4);
        for d in &self.density {
            buf.extend_from_slice(&(*d as f32).to_le_bytes());
        }
        w.write_all(&buf)
    }
}

/// Read a sidecar written by [`SdfImage::write_sidecar`].
pub fn read_sidecar(bytes: &[u8]) -> io::Result<Vec<f32>> {
    if bytes.len() % 4 != 0 {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "sidecar length is not a multiple of 4"));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

struct Splat {
    pr: Projection,
    weight: f64,
    y0: i64,
    y1: i64,
    x0: i64,
    x1: i64,
}

/// Evaluate the field at every pixel.
///
/// Each pixel sums contributions in particle order, so the result is
/// bit-identical to a naive per-(pixel, particle) loop and independent of the
/// number of worker threads.
pub fn render_sdf(
    snapshot: &ParticleSnapshot,
    camera: &CameraModel,
    params: &SdfParams,
) -> Result<SdfImage, SdfError> {
    params.validate()?;
    let proj = camera.projector()?;
    let (w, h) = (camera.width, camera.height);
    let c = proj.position();
    let r = params.splat_radius;
    let splats: Vec<Splat> = snapshot
        .particles
        .iter()
        .filter_map(|p| {
            let pr = proj.project_in_view(&p.position)?;
            Some(Splat {
                pr,
                weight: contribution(p, &c, params),
                x0: ((pr.u - r - 1.0).floor() as i64).max(0),
                x1: ((pr.u + r + 1.0).ceil() as i64).min(w as i64 - 1),
                y0: ((pr.v - r - 1.0).floor() as i64).max(0),
                y1: ((pr.v + r + 1.0).ceil() as i64).min(h as i64 - 1),
            })
        })
        .collect();

    let mut density = vec![0.0f64; (w * h) as usize];
    density
        .par_chunks_mut(w as usize)
        .enumerate()
        .for_each(|(y, row)| {
            let y = y as i64;
            for s in splats.iter().filter(|s| s.y0 <= y && y <= s.y1) {
                for x in s.x0..=s.x1 {
                    if disc_covers(s.pr.u, s.pr.v, r, x, y) {
                        row[x as usize] += s.weight;
                    }
                }
            }
            for d in row.iter_mut() {
                *d *= params.kappa;
            }
        });

    let normalizer = match params.normalization {
        Normalization::FixedMax { v_ref } => params.kappa * v_ref,
        Normalization::PerFrameMax => density.iter().copied().fold(0.0, f64::max),
    };
    Ok(SdfImage {
        width: w,
        height: h,
        density,
        normalizer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam(w: u32, h: u32) -> CameraModel {
        CameraModel {
            position: Vec3::new(0.0, 0.0, 5.0),
            look_at: Vec3::zeros(),
            up: Vec3::new(0.0, 1.0, 0.0),
            focal_length: 40.0,
            width: w,
            height: h,
            near_plane: 0.1,
        }
    }

    fn snap(particles: Vec<Particle>) -> ParticleSnapshot {
        ParticleSnapshot {
            step: 0,
            time: 0.0,
            particles,
        }
    }

    fn params(kappa: f64, alpha: f64) -> SdfParams {
        SdfParams {
            kappa,
            alpha,
            splat_radius: 2.0,
            normalization: Normalization::PerFrameMax,
            integrand: Integrand::Speed,
        }
    }

    #[test]
    fn projected_velocity_examples() {
        let o = Vec3::zeros();
        let pv = |v: Vec3, c: Vec3| project_velocity(&v, &o, &c).unwrap();
        assert_eq!(pv(Vec3::new(0.0, 0.0, 2.0), Vec3::new(0.0, 0.0, 5.0)), 2.0);
        assert_eq!(pv(Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 0.0, 5.0)), 0.0);
        assert_eq!(pv(Vec3::new(3.0, 4.0, 0.0), Vec3::new(1.0, 0.0, 0.0)), 3.0);
        assert!(pv(Vec3::new(0.0, 0.0, -1.0), Vec3::new(0.0, 0.0, 5.0)) < 0.0);
        assert_eq!(
            project_velocity(&Vec3::zeros(), &o, &o),
            Err(SdfError::DegenerateGeometry)
        );
    }

    // The camera sits at distance `d` along the optical axis from each
    // particle placed at the origin, so |c - p| = d.
    fn cam_at(d: f64) -> CameraModel {
        let mut c = cam(16, 16);
        c.position = Vec3::new(0.0, 0.0, d);
        c.near_plane = 1e-3;
        c
    }

    #[test]
    fn single_term_densities() {
        let p = Particle::new(Vec3::zeros(), Vec3::new(3.0, 0.0, 0.0));
        let d = blue_density((8, 8), &snap(vec![p]), &cam_at(5.0), &params(1.0, 0.0)).unwrap();
        assert_eq!(d, 3.0);

        let p = Particle::new(Vec3::zeros(), Vec3::new(0.0, 4.0, 0.0));
        let d = blue_density((8, 8), &snap(vec![p]), &cam_at(1.0), &params(2.0, 1.0)).unwrap();
        assert_eq!(d, 4.0);
    }

    #[test]
    fn two_term_density() {
        // a particle at distance 0 sits on the camera, outside the frustum,
        // so the two-term sum is checked on the attenuated terms directly
        let c = Vec3::new(0.0, 0.0, 2.0);
        let pr = params(1.0, 0.5);
        let a = Particle::new(c, Vec3::new(1.0, 0.0, 0.0));
        let b = Particle::new(Vec3::zeros(), Vec3::new(6.0, 0.0, 0.0));
        let sum = pr.kappa * (contribution(&a, &c, &pr) + contribution(&b, &c, &pr));
        assert_eq!(sum, 3.0);
    }

    #[test]
    fn zero_velocity_gives_zero_field_at_floor() {
        let ps = (0..10)
            .map(|i| Particle::new(Vec3::new(i as f64 * 0.1 - 0.5, 0.0, 0.0), Vec3::zeros()))
            .collect();
        let img = render_sdf(&snap(ps), &cam(32, 32), &params(1.0, 0.5)).unwrap();
        assert!(img.densities().iter().all(|&d| d == 0.0));
        let rgb = img.to_rgb(None).unwrap();
        assert!(rgb.pixels().all(|p| p.0 == [0, 0, 0]));
    }

    #[test]
    fn render_matches_pointwise_density() {
        let ps = vec![
            Particle::new(Vec3::new(0.1, 0.2, 0.0), Vec3::new(1.0, 2.0, 0.5)),
            Particle::new(Vec3::new(0.12, 0.18, 0.3), Vec3::new(-1.0, 0.0, 0.5)),
            Particle::new(Vec3::new(-0.6, -0.1, -1.0), Vec3::new(0.0, 0.0, 3.0)),
        ];
        let s = snap(ps);
        let camera = cam(24, 20);
        for integrand in [Integrand::Speed, Integrand::Projected] {
            let mut p = params(1.5, 0.3);
            p.integrand = integrand;
            let img = render_sdf(&s, &camera, &p).unwrap();
            for y in 0..20 {
                for x in 0..24 {
                    assert_eq!(img.density_at(x, y), blue_density((x, y), &s, &camera, &p).unwrap());
                }
            }
        }
    }

    #[test]
    fn receding_particles_vanish_in_projected_mode() {
        let p = Particle::new(Vec3::zeros(), Vec3::new(0.0, 0.0, -2.0));
        let mut pr = params(1.0, 0.0);
        pr.integrand = Integrand::Projected;
        assert_eq!(blue_density((8, 8), &snap(vec![p]), &cam_at(5.0), &pr).unwrap(), 0.0);
        pr.integrand = Integrand::Speed;
        assert_eq!(blue_density((8, 8), &snap(vec![p]), &cam_at(5.0), &pr).unwrap(), 2.0);
    }

    #[test]
    fn out_of_frustum_particles_contribute_nothing() {
        // projects far outside the 16x16 image
        let p = Particle::new(Vec3::new(4.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0));
        let img = render_sdf(&snap(vec![p]), &cam(16, 16), &params(1.0, 0.0)).unwrap();
        assert!(img.densities().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn quantization_monotone_and_floored() {
        let img = SdfImage {
            width: 4,
            height: 1,
            density: vec![0.0, 0.5, 1.0, 3.0],
            normalizer: 1.0,
        };
        let blues: Vec<u8> = (0..4).map(|x| img.blue_over(x, 0, 40)).collect();
        assert_eq!(blues, vec![40, 148, 255, 255]);
    }

    #[test]
    fn sidecar_round_trip() {
        let img = SdfImage {
            width: 2,
            height: 2,
            density: vec![0.0, 1.5, 2.25, 1e-3],
            normalizer: 2.25,
        };
        let mut buf = Vec::new();
        img.write_sidecar(&mut buf).unwrap();
        assert_eq!(buf.len(), 16);
        assert_eq!(read_sidecar(&buf).unwrap(), vec![0.0f32, 1.5, 2.25, 1e-3]);
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = params(0.0, 0.0);
        assert!(p.validate().is_err());
        p.kappa = 1.0;
        p.alpha = -1.0;
        assert!(p.validate().is_err());
        p.alpha = 0.0;
        p.normalization = Normalization::FixedMax { v_ref: 0.0 };
        assert!(p.validate().is_err());
    }
}
