use serde::{Deserialize, Serialize};

use super::Camera;
use crate::geometry::{ColonModel, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LightKind {
    Ambient,
    Point,
}

/// A light source. Negative intensities remove light.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Light {
    pub kind: LightKind,
    /// Ignored for ambient lights.
    pub position: Vec3,
    pub color: [f64; 3],
    pub intensity: f64,
    /// Distance at which a point light's contribution has halved.
    pub range: f64,
}

impl Light {
    pub fn ambient(intensity: f64) -> Light {
        Light {
            kind: LightKind::Ambient,
            position: Vec3::ZERO,
            color: [1.0; 3],
            intensity,
            range: f64::INFINITY,
        }
    }

    pub fn point(position: Vec3, intensity: f64, range: f64) -> Light {
        Light { kind: LightKind::Point, position, color: [1.0; 3], intensity, range }
    }

    /// `1 / (1 + (d / range)^2)`.
    pub fn attenuation(&self, distance: f64) -> f64 {
        let r = distance / self.range;
        1.0 / (1.0 + r * r)
    }
}

/// Strengths of the standard rig; positions follow the colon and camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LightRig {
    pub ambient_intensity: f64,
    pub glare_intensity: f64,
    pub glare_range: f64,
    /// Lateral offset of the two glare lights from the camera.
    pub glare_offset: f64,
    pub negative_intensity: f64,
    pub negative_range: f64,
}

impl Default for LightRig {
    fn default() -> Self {
        LightRig {
            ambient_intensity: 0.25,
            glare_intensity: 1.1,
            glare_range: 3.5,
            glare_offset: 0.35,
            negative_intensity: -1.0,
            negative_range: 1.2,
        }
    }
}

impl LightRig {
    /// One white ambient light, two white point lights just behind the
    /// camera, and three negative point lights over the last tenth of the
    /// centerline.
    pub fn build(&self, colon: &ColonModel, camera: &Camera) -> Vec<Light> {
        let mut lights = vec![Light::ambient(self.ambient_intensity)];
        let right = camera.right();
        let behind = camera.position - camera.forward * 0.1;
        for side in [-1.0, 1.0] {
            lights.push(Light::point(
                behind + right * (side * self.glare_offset),
                self.glare_intensity,
                self.glare_range,
            ));
        }
        let len = colon.spec.length;
        for frac in [0.9, 0.95, 0.995] {
            lights.push(Light::point(
                colon.centerline_at(frac * len),
                self.negative_intensity,
                self.negative_range,
            ));
        }
        lights
    }
}
