use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{GeometryError, TriangleMesh, Vec3};
use crate::seed;

/// Where a polyp sits inside the colon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    /// Resting against the colon wall.
    Wall,
    /// Floating near the centerline.
    Lumen,
}

/// Parameters of the distorted polyp sphere.
///
/// The sphere has `latitudinal_divisions` vertex rings strictly between the
/// poles, each with `longitudinal_divisions` vertices, and one vertex per
/// pole. Bands between rings give two triangles per cell; the first and
/// last latitude bands are fans against the collapsed pole ring. The total
/// is `2 × longitudinal × latitudinal` triangles with none degenerate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolypSpec {
    pub longitudinal_divisions: usize,
    pub latitudinal_divisions: usize,
    pub base_radius: f64,
    /// Half-width of the radial noise, as a fraction of `base_radius`.
    pub distortion_amplitude: f64,
    pub placement: Placement,
}

impl Default for PolypSpec {
    fn default() -> Self {
        PolypSpec {
            longitudinal_divisions: 128,
            latitudinal_divisions: 64,
            base_radius: 0.4,
            distortion_amplitude: 0.06,
            placement: Placement::Wall,
        }
    }
}

impl PolypSpec {
    pub fn face_count(&self) -> usize {
        2 * self.longitudinal_divisions * self.latitudinal_divisions
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.longitudinal_divisions < 3 || self.latitudinal_divisions < 1 {
            return Err(GeometryError::InvalidSpec(format!(
                "polyp divisions must be at least 3x1, got {}x{}",
                self.longitudinal_divisions, self.latitudinal_divisions
            )));
        }
        if !(self.base_radius > 0.0) {
            return Err(GeometryError::InvalidSpec(format!(
                "polyp base_radius must be positive, got {}",
                self.base_radius
            )));
        }
        if !(0.0..=0.5).contains(&self.distortion_amplitude) {
            return Err(GeometryError::InvalidSpec(format!(
                "distortion_amplitude must be in [0, 0.5], got {}",
                self.distortion_amplitude
            )));
        }
        Ok(())
    }
}

/// Generates a polyp centered on the origin.
pub fn generate_polyp(spec: &PolypSpec, seed: u64) -> Result<TriangleMesh, GeometryError> {
    spec.validate()?;
    let mut rng = seed::stream_rng(seed, seed::Stream::Polyp);
    let lon = spec.longitudinal_divisions;
    let lat = spec.latitudinal_divisions;
    let amp = spec.distortion_amplitude;
    let mut radius = || {
        let u = if amp > 0.0 { rng.random_range(-amp..=amp) } else { 0.0 };
        spec.base_radius * (1.0 + u)
    };

    let mut vertices = Vec::with_capacity(lon * lat + 2);
    vertices.push(Vec3::Z * radius());
    for i in 0..lat {
        let theta = PI * (i + 1) as f64 / (lat + 1) as f64;
        for j in 0..lon {
            let phi = 2.0 * PI * j as f64 / lon as f64;
            let dir = Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos());
            vertices.push(dir * radius());
        }
    }
    vertices.push(-Vec3::Z * radius());
    let north = 0u32;
    let south = (vertices.len() - 1) as u32;
    let ring = |i: usize, j: usize| (1 + i * lon + j % lon) as u32;

    let mut faces = Vec::with_capacity(spec.face_count());
    for j in 0..lon {
        faces.push([north, ring(0, j), ring(0, j + 1)]);
    }
    for i in 0..lat - 1 {
        for j in 0..lon {
            let (a, b) = (ring(i, j), ring(i, j + 1));
            let (c, d) = (ring(i + 1, j), ring(i + 1, j + 1));
            faces.push([a, c, b]);
            faces.push([b, c, d]);
        }
    }
    for j in 0..lon {
        faces.push([ring(lat - 1, j), south, ring(lat - 1, j + 1)]);
    }
    Ok(TriangleMesh::new("polyp", vertices, faces))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_face_count_is_16384() {
        let spec = PolypSpec::default();
        assert_eq!(spec.face_count(), 16384);
        let mesh = generate_polyp(&spec, 7).unwrap();
        assert_eq!(mesh.face_count(), 16384);
        assert_eq!(mesh.vertex_count(), 128 * 64 + 2);
        mesh.validate().unwrap();
    }

    #[test]
    fn undistorted_sphere_has_constant_radius() {
        let spec = PolypSpec { distortion_amplitude: 0.0, base_radius: 0.75, ..PolypSpec::default() };
        let mesh = generate_polyp(&spec, 3).unwrap();
        for v in &mesh.vertices {
            assert!((v.length() - 0.75).abs() < 1e-6);
        }
    }

    #[test]
    fn distortion_stays_within_amplitude() {
        let spec = PolypSpec { distortion_amplitude: 0.2, ..PolypSpec::default() };
        let mesh = generate_polyp(&spec, 9).unwrap();
        let r = spec.base_radius;
        for v in &mesh.vertices {
            let l = v.length();
            assert!(l >= r * 0.8 - 1e-12 && l <= r * 1.2 + 1e-12);
        }
    }

    #[test]
    fn normals_point_outward() {
        let mesh = generate_polyp(&PolypSpec { distortion_amplitude: 0.0, ..PolypSpec::default() }, 1).unwrap();
        for (v, n) in mesh.vertices.iter().zip(&mesh.normals) {
            assert!(v.normalized().dot(*n) > 0.9);
        }
    }

    #[test]
    fn deterministic() {
        let spec = PolypSpec::default();
        assert_eq!(generate_polyp(&spec, 7).unwrap(), generate_polyp(&spec, 7).unwrap());
    }

    #[test]
    fn invalid_divisions_are_rejected() {
        let spec = PolypSpec { longitudinal_divisions: 0, ..PolypSpec::default() };
        assert!(matches!(generate_polyp(&spec, 1), Err(GeometryError::InvalidSpec(_))));
        let spec = PolypSpec { latitudinal_divisions: 0, ..PolypSpec::default() };
        assert!(generate_polyp(&spec, 1).is_err());
        let spec = PolypSpec { distortion_amplitude: 0.6, ..PolypSpec::default() };
        assert!(generate_polyp(&spec, 1).is_err());
    }
}
