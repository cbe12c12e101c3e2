use serde::{Deserialize, Serialize};

use super::RenderError;
use crate::geometry::{ColonModel, Vec3};

/// Pinhole camera. Depth is measured along `forward`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: Vec3,
    pub forward: Vec3,
    pub up: Vec3,
    /// Vertical field of view in degrees.
    pub fov_degrees: f64,
    pub near: f64,
    pub far: f64,
}

impl Camera {
    /// On the centerline at the colon entrance, looking down the lumen.
    pub fn at_entrance(colon: &ColonModel) -> Camera {
        Camera {
            position: colon.centerline_at(0.0),
            forward: Vec3::Z,
            up: Vec3::Y,
            fov_degrees: 90.0,
            near: 0.05,
            far: colon.spec.length * 1.25,
        }
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        let bad = |m: String| Err(RenderError::InvalidCamera(m));
        if (self.forward.length() - 1.0).abs() > 1e-6 || (self.up.length() - 1.0).abs() > 1e-6 {
            return bad("forward and up must be unit vectors".into());
        }
        if self.forward.dot(self.up).abs() > 1e-6 {
            return bad("forward and up must be perpendicular".into());
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return bad(format!("need 0 < near < far, got near={} far={}", self.near, self.far));
        }
        if !(self.fov_degrees > 10.0 && self.fov_degrees < 170.0) {
            return bad(format!("fov {} outside (10, 170)", self.fov_degrees));
        }
        Ok(())
    }

    /// Screen-right axis.
    pub fn right(&self) -> Vec3 {
        self.forward.cross(self.up).normalized()
    }

    /// Focal length in pixels for an image `height` pixels tall.
    pub fn focal_pixels(&self, height: usize) -> f64 {
        0.5 * height as f64 / (0.5 * self.fov_degrees.to_radians()).tan()
    }

    /// World point to camera coordinates `(right, up, depth)`.
    pub fn to_view(&self, p: Vec3) -> Vec3 {
        let d = p - self.position;
        Vec3::new(d.dot(self.right()), d.dot(self.up), d.dot(self.forward))
    }

    /// Unit ray direction through the center of pixel `(px, py)`.
    pub fn pixel_ray(&self, px: usize, py: usize, width: usize, height: usize) -> Vec3 {
        let f = self.focal_pixels(height);
        let x = (px as f64 + 0.5 - 0.5 * width as f64) / f;
        let y = -(py as f64 + 0.5 - 0.5 * height as f64) / f;
        (self.right() * x + self.up * y + self.forward).normalized()
    }
}
