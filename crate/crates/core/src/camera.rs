//! Pinhole camera.
//!
//! Camera space: `right`, `up`, `forward` (looking down +forward). Image
//! coordinates have the origin at the top-left corner, `u` to the right and
//! `v` downwards; pixel `(i, j)` covers `[i, i+1) x [j, j+1)` and its center
//! sits at `(i + 0.5, j + 0.5)`. The principal point is the image center.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{Aabb, Vec3};

#[derive(Debug, Error, PartialEq)]
pub enum CameraError {
    #[error("invalid camera: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub position: Vec3,
    pub look_at: Vec3,
    pub up: Vec3,
    /// pixels
    pub focal_length: f64,
    pub width: u32,
    pub height: u32,
    /// meters
    pub near_plane: f64,
}

/// A point in image space plus its camera-space depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

impl Projection {
    /// Pixel containing the projected point, if it is inside the image.
    pub fn pixel(&self, width: u32, height: u32) -> Option<(u32, u32)> {
        if self.u >= 0.0 && self.v >= 0.0 && self.u < width as f64 && self.v < height as f64 {
            Some((self.u.floor() as u32, self.v.floor() as u32))
        } else {
            None
        }
    }
}

/// Camera with its orthonormal basis precomputed.
#[derive(Debug, Clone, Copy)]
pub struct Projector {
    position: Vec3,
    right: Vec3,
    up: Vec3,
    forward: Vec3,
    focal: f64,
    cx: f64,
    cy: f64,
    near: f64,
    width: u32,
    height: u32,
}

impl Projector {
    pub fn project(&self, p: &Vec3) -> Option<Projection> {
        let d = p - self.position;
        let depth = d.dot(&self.forward);
        if !(depth > self.near) {
            return None;
        }
        let x = d.dot(&self.right);
        let y = d.dot(&self.up);
        Some(Projection {
            u: self.cx + self.focal * x / depth,
            v: self.cy - self.focal * y / depth,
            depth,
        })
    }

    /// Projection restricted to the view frustum: in front of the near plane
    /// and inside the image rectangle.
    pub fn project_in_view(&self, p: &Vec3) -> Option<Projection> {
        self.project(p)
            .filter(|pr| pr.pixel(self.width, self.height).is_some())
    }

    pub fn position(&self) -> Vec3 {
        self.position
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<(), CameraError> {
        let bad = |m: &str| Err(CameraError::Invalid(m.to_string()));
        if self.width == 0 || self.height == 0 {
            return bad("resolution must be > 0");
        }
        if !(self.focal_length.is_finite() && self.focal_length > 0.0) {
            return bad("focal_length must be > 0");
        }
        if !(self.near_plane.is_finite() && self.near_plane > 0.0) {
            return bad("near_plane must be > 0");
        }
        let fwd = self.look_at - self.position;
        if fwd.norm() == 0.0 {
            return bad("look_at coincides with position");
        }
        if fwd.cross(&self.up).norm() <= 1e-12 * fwd.norm() * self.up.norm().max(1e-300) {
            return bad("up is parallel to the view direction");
        }
        Ok(())
    }

    pub fn projector(&self) -> Result<Projector, CameraError> {
        self.validate()?;
        let forward = (self.look_at - self.position).normalize();
        let right = forward.cross(&self.up).normalize();
        let up = right.cross(&forward);
        Ok(Projector {
            position: self.position,
            right,
            up,
            forward,
            focal: self.focal_length,
            cx: self.width as f64 / 2.0,
            cy: self.height as f64 / 2.0,
            near: self.near_plane,
            width: self.width,
            height: self.height,
        })
    }

    pub fn project(&self, p: &Vec3) -> Result<Option<Projection>, CameraError> {
        Ok(self.projector()?.project(p))
    }

    /// One of five fixed viewpoints framing `container`. Indices wrap.
    pub fn preset_view(index: usize, container: &Aabb, width: u32, height: u32) -> Self {
        let center = container.center();
        let extent = (container.max - container.min).norm();
        let dist = extent * 1.6;
        // (azimuth degrees, elevation degrees)
        const VIEWS: [(f64, f64); 5] = [
            (0.0, 10.0),
            (35.0, 20.0),
            (-35.0, 20.0),
            (0.0, 40.0),
            (70.0, 12.0),
        ];
        let (az, el) = VIEWS[index % VIEWS.len()];
        let (az, el) = (az.to_radians(), el.to_radians());
        let offset = Vec3::new(az.sin() * el.cos(), el.sin(), az.cos() * el.cos()) * dist;
        let focal = 0.9 * width.min(height) as f64 * dist / extent;
        CameraModel {
            position: center + offset,
            look_at: center,
            up: Vec3::new(0.0, 1.0, 0.0),
            focal_length: focal,
            width,
            height,
            near_plane: 0.05,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> CameraModel {
        CameraModel {
            position: Vec3::new(0.0, 0.0, 5.0),
            look_at: Vec3::zeros(),
            up: Vec3::new(0.0, 1.0, 0.0),
            focal_length: 50.0,
            width: 64,
            height: 48,
            near_plane: 0.1,
        }
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let pr = cam().project(&Vec3::zeros()).unwrap().unwrap();
        assert_eq!((pr.u, pr.v), (32.0, 24.0));
        assert_eq!(pr.depth, 5.0);
    }

    #[test]
    fn image_axes_orientation() {
        let c = cam();
        let right = c.project(&Vec3::new(1.0, 0.0, 0.0)).unwrap().unwrap();
        let above = c.project(&Vec3::new(0.0, 1.0, 0.0)).unwrap().unwrap();
        assert!(right.u > 32.0);
        assert!(above.v < 24.0);
        assert!((right.u - (32.0 + 50.0 / 5.0)).abs() < 1e-12);
    }

    #[test]
    fn behind_camera_is_not_projected() {
        assert!(cam().project(&Vec3::new(0.0, 0.0, 6.0)).unwrap().is_none());
        assert!(cam().project(&Vec3::new(0.0, 0.0, 4.95)).unwrap().is_none());
    }

    #[test]
    fn degenerate_cameras_rejected() {
        let mut c = cam();
        c.up = Vec3::new(0.0, 0.0, 1.0);
        assert!(c.validate().is_err());
        let mut c = cam();
        c.width = 0;
        assert!(c.validate().is_err());
        let mut c = cam();
        c.focal_length = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn preset_views_see_container_center() {
        let b = Aabb::new(Vec3::new(-0.5, 0.0, -0.5), Vec3::new(0.5, 1.0, 0.5));
        for i in 0..5 {
            let c = CameraModel::preset_view(i, &b, 128, 96);
            c.validate().unwrap();
            let pr = c.project(&b.center()).unwrap().unwrap();
            assert!((pr.u - 64.0).abs() < 1e-9 && (pr.v - 48.0).abs() < 1e-9);
        }
    }
}
