use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{GeometryError, TriangleMesh, Vec3};
use crate::seed;

/// Parameters of the colon tube.
///
/// The tube is a triangulated grid of `radial_segments` columns and
/// `axial_rings` quad bands along +z, closed at the far end by a fan of
/// `radial_segments` triangles. The entrance at `z = 0` stays open.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColonSpec {
    pub radial_segments: usize,
    pub axial_rings: usize,
    pub length: f64,
    pub entry_radius: f64,
    pub tip_radius: f64,
    /// Half-width of the per-axis uniform vertex jitter at the entrance.
    /// Scales with the local radius further down the tube.
    pub jitter_amplitude: f64,
    pub centerline_segment_count: usize,
    /// Radius of the disc in which each centerline control point is displaced.
    pub segment_displacement_range: f64,
}

impl Default for ColonSpec {
    fn default() -> Self {
        let entry_radius = 1.5;
        ColonSpec {
            radial_segments: 6,
            axial_rings: 204,
            length: 8.0,
            entry_radius,
            tip_radius: 0.5,
            jitter_amplitude: 0.04 * entry_radius,
            centerline_segment_count: 7,
            segment_displacement_range: 0.3 * entry_radius,
        }
    }
}

impl ColonSpec {
    /// `radial_segments × (2·axial_rings + 1)`.
    pub fn face_count(&self) -> usize {
        self.radial_segments * (2 * self.axial_rings + 1)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |msg: String| Err(GeometryError::InvalidSpec(msg));
        if self.face_count() == 0 {
            return bad("colon spec implies zero faces".into());
        }
        if self.axial_rings == 0 {
            return bad("axial_rings must be >= 1".into());
        }
        if self.radial_segments < 3 {
            return bad(format!("radial_segments must be >= 3, got {}", self.radial_segments));
        }
        if self.centerline_segment_count == 0 {
            return bad("centerline_segment_count must be >= 1".into());
        }
        if !(self.length > 0.0 && self.entry_radius > 0.0 && self.tip_radius > 0.0) {
            return bad("length and radii must be positive".into());
        }
        if !(self.jitter_amplitude >= 0.0) {
            return bad("jitter_amplitude must be non-negative".into());
        }
        // Heuristic fold bound: jitter beyond a quarter radius crumples the
        // wall through itself, and lateral displacement beyond half a
        // segment length bends the tube back over its own cross-sections.
        if self.jitter_amplitude > 0.25 * self.entry_radius {
            return bad(format!(
                "jitter_amplitude {} would fold the tube wall",
                self.jitter_amplitude
            ));
        }
        let segment_length = self.length / self.centerline_segment_count as f64;
        if !(self.segment_displacement_range >= 0.0)
            || self.segment_displacement_range > 0.5 * segment_length
        {
            return bad(format!(
                "segment_displacement_range {} exceeds half the segment length {}",
                self.segment_displacement_range,
                0.5 * segment_length
            ));
        }
        Ok(())
    }
}

/// A generated colon: the mesh plus the analytic skeleton it was built from.
#[derive(Debug, Clone)]
pub struct ColonModel {
    pub mesh: TriangleMesh,
    pub spec: ColonSpec,
    /// Unjittered ring centers, one per ring, `axial_rings + 1` in total.
    pub ring_centers: Vec<Vec3>,
    pub ring_radii: Vec<f64>,
}

/// Catmull-Rom interpolation of the lateral control offsets at parameter `u ∈ [0, n]`.
fn catmull_rom(points: &[(f64, f64)], u: f64) -> (f64, f64) {
    let n = points.len() - 1;
    let k = (u.floor() as usize).min(n - 1);
    let t = u - k as f64;
    let get = |i: isize| -> (f64, f64) {
        if i < 0 {
            let (a, b) = (points[0], points[1]);
            (2.0 * a.0 - b.0, 2.0 * a.1 - b.1)
        } else if i as usize > n {
            let (a, b) = (points[n], points[n - 1]);
            (2.0 * a.0 - b.0, 2.0 * a.1 - b.1)
        } else {
            points[i as usize]
        }
    };
    let k = k as isize;
    let (p0, p1, p2, p3) = (get(k - 1), get(k), get(k + 1), get(k + 2));
    let t2 = t * t;
    let t3 = t2 * t;
    let blend = |a: f64, b: f64, c: f64, d: f64| {
        0.5 * (2.0 * b + (-a + c) * t + (2.0 * a - 5.0 * b + 4.0 * c - d) * t2 + (-a + 3.0 * b - 3.0 * c + d) * t3)
    };
    (blend(p0.0, p1.0, p2.0, p3.0), blend(p0.1, p1.1, p2.1, p3.1))
}

/// Generates the jittered, bent colon tube for `(spec, seed)`.
pub fn generate_colon(spec: &ColonSpec, seed: u64) -> Result<ColonModel, GeometryError> {
    spec.validate()?;
    let mut rng = seed::stream_rng(seed, seed::Stream::Colon);

    // Control point 0 stays on the axis so the entrance camera sits on the centerline.
    let segments = spec.centerline_segment_count;
    let mut controls = vec![(0.0, 0.0)];
    for _ in 0..segments {
        let r = spec.segment_displacement_range * rng.random::<f64>().sqrt();
        let a = 2.0 * PI * rng.random::<f64>();
        controls.push((r * a.cos(), r * a.sin()));
    }

    let radial = spec.radial_segments;
    let rings = spec.axial_rings;
    let dz = spec.length / rings as f64;
    let mut ring_centers = Vec::with_capacity(rings + 1);
    let mut ring_radii = Vec::with_capacity(rings + 1);
    for i in 0..=rings {
        let z = i as f64 * dz;
        let u = z / spec.length * segments as f64;
        let (x, y) = catmull_rom(&controls, u);
        ring_centers.push(Vec3::new(x, y, z));
        ring_radii.push(spec.entry_radius + (spec.tip_radius - spec.entry_radius) * (z / spec.length));
    }

    let mut vertices = Vec::with_capacity((rings + 1) * radial + 1);
    for i in 0..=rings {
        let amp = spec.jitter_amplitude * ring_radii[i] / spec.entry_radius;
        for j in 0..radial {
            let phi = 2.0 * PI * j as f64 / radial as f64;
            let base = ring_centers[i] + Vec3::new(phi.cos(), phi.sin(), 0.0) * ring_radii[i];
            vertices.push(base + jitter(&mut rng, amp));
        }
    }
    let tip_amp = spec.jitter_amplitude * spec.tip_radius / spec.entry_radius;
    vertices.push(ring_centers[rings] + jitter(&mut rng, tip_amp));
    let tip = (vertices.len() - 1) as u32;

    // Windings keep face normals pointing into the lumen.
    let mut faces = Vec::with_capacity(spec.face_count());
    for i in 0..rings {
        for j in 0..radial {
            let a = (i * radial + j) as u32;
            let b = (i * radial + (j + 1) % radial) as u32;
            let c = ((i + 1) * radial + j) as u32;
            let d = ((i + 1) * radial + (j + 1) % radial) as u32;
            faces.push([a, c, b]);
            faces.push([b, c, d]);
        }
    }
    for j in 0..radial {
        let a = (rings * radial + j) as u32;
        let b = (rings * radial + (j + 1) % radial) as u32;
        faces.push([a, tip, b]);
    }

    Ok(ColonModel {
        mesh: TriangleMesh::new("colon", vertices, faces),
        spec: spec.clone(),
        ring_centers,
        ring_radii,
    })
}

fn jitter<R: Rng>(rng: &mut R, amp: f64) -> Vec3 {
    if amp == 0.0 {
        return Vec3::ZERO;
    }
    Vec3::new(
        rng.random_range(-amp..=amp),
        rng.random_range(-amp..=amp),
        rng.random_range(-amp..=amp),
    )
}

impl ColonModel {
    pub fn band_height(&self) -> f64 {
        self.spec.length / self.spec.axial_rings as f64
    }

    /// Point on the (piecewise linear) centerline at height `z`.
    pub fn centerline_at(&self, z: f64) -> Vec3 {
        let (i, t) = self.band_of(z);
        self.ring_centers[i].lerp(self.ring_centers[i + 1], t)
    }

    /// Unjittered tube radius at height `z`.
    pub fn radius_at(&self, z: f64) -> f64 {
        let (i, t) = self.band_of(z);
        self.ring_radii[i] + (self.ring_radii[i + 1] - self.ring_radii[i]) * t
    }

    /// Largest per-axis jitter half-width applied at height `z`.
    pub fn jitter_at(&self, z: f64) -> f64 {
        self.spec.jitter_amplitude * self.radius_at(z) / self.spec.entry_radius
    }

    fn band_of(&self, z: f64) -> (usize, f64) {
        let rings = self.spec.axial_rings;
        let u = (z / self.band_height()).clamp(0.0, rings as f64);
        let i = (u.floor() as usize).min(rings - 1);
        (i, u - i as f64)
    }

    fn band_window(&self) -> usize {
        let reach = 3f64.sqrt() * self.spec.jitter_amplitude;
        (reach / self.band_height()).ceil() as usize + 1
    }

    /// Faces that can lie within jitter reach of `p`: nearby bands, nearby
    /// angular sectors, and the tip fan when `p` is close to the end.
    fn local_faces(&self, p: Vec3) -> Vec<usize> {
        let radial = self.spec.radial_segments;
        let rings = self.spec.axial_rings;
        let w = self.band_window() as isize;
        let (band, _) = self.band_of(p.z);
        let c = self.centerline_at(p.z);
        let (qx, qy) = (p.x - c.x, p.y - c.y);
        let psi = if qx.hypot(qy) < 1e-9 { 0.0 } else { qy.atan2(qx).rem_euclid(2.0 * PI) };
        let sector = ((psi / (2.0 * PI / radial as f64)) as usize).min(radial - 1);
        let sectors: Vec<usize> = if radial <= 3 {
            (0..radial).collect()
        } else {
            vec![(sector + radial - 1) % radial, sector, (sector + 1) % radial]
        };
        let mut out = Vec::with_capacity((2 * w as usize + 1) * sectors.len() * 2 + radial);
        let lo = (band as isize - w).max(0) as usize;
        let hi = ((band as isize + w) as usize).min(rings - 1);
        for b in lo..=hi {
            for &j in &sectors {
                let f = 2 * (b * radial + j);
                out.push(f);
                out.push(f + 1);
            }
        }
        if hi + 1 >= rings {
            out.extend((0..radial).map(|j| 2 * rings * radial + j));
        }
        out
    }

    /// Signed distance from `p` to the tube wall: negative inside the lumen.
    ///
    /// Uses only the faces near `p`; valid for points with `0 < z < length`
    /// that are within a tube radius of the centerline. Points outside that
    /// slab are reported as outside.
    pub fn signed_distance(&self, p: Vec3) -> f64 {
        if p.z <= 0.0 || p.z >= self.spec.length {
            return self.nearest_face_distance(p).max(f64::MIN_POSITIVE);
        }
        let faces = self.local_faces(p);
        let dist = faces
            .iter()
            .map(|&f| {
                let (a, b, c) = self.mesh.triangle(f);
                super::closest_point_on_triangle(p, a, b, c).distance(p)
            })
            .fold(f64::INFINITY, f64::min);
        let center = self.centerline_at(p.z);
        let mut dir = Vec3::new(p.x - center.x, p.y - center.y, 0.0);
        if dir.length() < 1e-9 {
            dir = Vec3::X;
        }
        let dir = dir.normalized();
        let hits = faces
            .iter()
            .filter(|&&f| {
                let (a, b, c) = self.mesh.triangle(f);
                super::ray_triangle(p, dir, a, b, c).is_some()
            })
            .count();
        if hits % 2 == 1 {
            -dist
        } else {
            dist
        }
    }

    /// Distance from `p` to the closest colon face (local search).
    pub fn nearest_face_distance(&self, p: Vec3) -> f64 {
        let z = p.z.clamp(0.0, self.spec.length);
        let q = Vec3::new(p.x, p.y, z);
        self.local_faces(q)
            .iter()
            .map(|&f| {
                let (a, b, c) = self.mesh.triangle(f);
                super::closest_point_on_triangle(p, a, b, c).distance(p)
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Cheap lower bound on the inside clearance of `p`, from the analytic
    /// unjittered cross-section minus the worst-case jitter displacement.
    /// Non-positive values mean "not provably inside".
    pub fn clearance_lower_bound(&self, p: Vec3) -> f64 {
        let len = self.spec.length;
        if p.z <= 0.0 || p.z >= len {
            return -1.0;
        }
        let radial = self.spec.radial_segments as f64;
        let (band, t) = self.band_of(p.z);
        let c = self.ring_centers[band].lerp(self.ring_centers[band + 1], t);
        let r = self.ring_radii[band] + (self.ring_radii[band + 1] - self.ring_radii[band]) * t;
        let qx = p.x - c.x;
        let qy = p.y - c.y;
        let apothem = r * (PI / radial).cos();
        let step = 2.0 * PI / radial;
        let psi = qy.atan2(qx).rem_euclid(2.0 * PI);
        let k = (psi / step).floor();
        let normal_angle = k * step + step / 2.0;
        let slice = apothem - (qx * normal_angle.cos() + qy * normal_angle.sin());

        // Tilt of the wall relative to the slice plane over the jitter window.
        let w = self.band_window();
        let lo = band.saturating_sub(w);
        let hi = (band + w).min(self.spec.axial_rings - 1);
        let dz = self.band_height();
        let mut slope: f64 = 0.0;
        for b in lo..=hi {
            let dc = self.ring_centers[b + 1] - self.ring_centers[b];
            let lateral = (dc.x * dc.x + dc.y * dc.y).sqrt();
            let taper = (self.ring_radii[b + 1] - self.ring_radii[b]).abs();
            slope = slope.max((lateral + taper) / dz);
        }
        let taper_slack = (self.ring_radii[band] - self.ring_radii[band + 1]).abs();
        let jitter = 3f64.sqrt() * self.spec.jitter_amplitude * self.ring_radii[lo] / self.spec.entry_radius;
        slice / (1.0 + slope * slope).sqrt() - jitter - taper_slack
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_face_count_is_2454() {
        let spec = ColonSpec::default();
        assert_eq!(spec.face_count(), 2454);
        let colon = generate_colon(&spec, 42).unwrap();
        assert_eq!(colon.mesh.face_count(), 2454);
        colon.mesh.validate().unwrap();
    }

    #[test]
    fn deterministic_for_same_seed() {
        let spec = ColonSpec::default();
        let a = generate_colon(&spec, 42).unwrap();
        let b = generate_colon(&spec, 42).unwrap();
        let bits = |m: &ColonModel| -> Vec<u64> {
            m.mesh.vertices.iter().flat_map(|v| v.to_array()).map(f64::to_bits).collect()
        };
        assert_eq!(bits(&a), bits(&b));
        let c = generate_colon(&spec, 43).unwrap();
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn zero_noise_rings_are_equidistant_from_straight_axis() {
        let spec = ColonSpec {
            jitter_amplitude: 0.0,
            segment_displacement_range: 0.0,
            ..ColonSpec::default()
        };
        for seed in [0, 1, 99] {
            let colon = generate_colon(&spec, seed).unwrap();
            let radial = spec.radial_segments;
            for i in 0..=spec.axial_rings {
                let expected = colon.ring_radii[i];
                for j in 0..radial {
                    let v = colon.mesh.vertices[i * radial + j];
                    let d = (v.x * v.x + v.y * v.y).sqrt();
                    assert!((d - expected).abs() < 1e-6, "ring {i} vertex {j}: {d} vs {expected}");
                    assert!((v.z - i as f64 * colon.band_height()).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn normals_point_into_lumen() {
        let spec = ColonSpec { jitter_amplitude: 0.0, ..ColonSpec::default() };
        let colon = generate_colon(&spec, 5).unwrap();
        let radial = colon.spec.radial_segments;
        for i in (10..200).step_by(17) {
            for j in 0..radial {
                let idx = i * radial + j;
                let v = colon.mesh.vertices[idx];
                let c = colon.ring_centers[i];
                let outward = Vec3::new(v.x - c.x, v.y - c.y, 0.0);
                assert!(colon.mesh.normals[idx].dot(outward) < 0.0);
            }
        }
    }

    #[test]
    fn face_count_law_holds_for_other_grids() {
        for (radial, rings) in [(3, 1), (8, 10), (12, 50)] {
            let spec = ColonSpec {
                radial_segments: radial,
                axial_rings: rings,
                ..ColonSpec::default()
            };
            let colon = generate_colon(&spec, 1).unwrap();
            assert_eq!(colon.mesh.face_count(), radial * (2 * rings + 1));
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let zero = ColonSpec { radial_segments: 0, ..ColonSpec::default() };
        assert!(matches!(generate_colon(&zero, 1), Err(GeometryError::InvalidSpec(_))));
        let rings = ColonSpec { axial_rings: 0, ..ColonSpec::default() };
        assert!(generate_colon(&rings, 1).is_err());
        let bent = ColonSpec { segment_displacement_range: 5.0, ..ColonSpec::default() };
        assert!(generate_colon(&bent, 1).is_err());
        let crumpled = ColonSpec { jitter_amplitude: 0.9, ..ColonSpec::default() };
        assert!(generate_colon(&crumpled, 1).is_err());
        let negative = ColonSpec { jitter_amplitude: -0.1, ..ColonSpec::default() };
        assert!(generate_colon(&negative, 1).is_err());
    }

    #[test]
    fn centerline_points_are_inside_and_clearance_is_conservative() {
        let colon = generate_colon(&ColonSpec::default(), 11).unwrap();
        for k in 1..40 {
            let z = colon.spec.length * k as f64 / 40.0;
            let c = colon.centerline_at(z);
            assert!(colon.signed_distance(c) < 0.0, "z={z}");
            let bound = colon.clearance_lower_bound(c);
            assert!(bound > 0.0);
            assert!(bound <= -colon.signed_distance(c) + 1e-12);
        }
    }
}
