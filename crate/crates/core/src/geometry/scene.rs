use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ColonModel, GeometryError, Mat3, Placement, TriangleMesh, Vec3};
use crate::seed;

/// `p -> rotation · (scale · p) + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
    pub scale: f64,
}

impl RigidTransform {
    pub fn apply(&self, p: Vec3) -> Vec3 {
        self.rotation.apply(p * self.scale) + self.translation
    }
}

/// Tunables of the rejection sampler that places the polyp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlacementOptions {
    pub max_attempts: usize,
    /// Fraction of the tube length, measured from the entrance, where the
    /// axial sampling window starts and ends.
    pub axial_window: (f64, f64),
    /// Largest centerline offset of a lumen polyp, as a fraction of the local radius.
    pub lumen_offset_fraction: f64,
    /// Gap left between a wall polyp and the wall, as a fraction of its radius.
    pub wall_gap_fraction: f64,
}

impl Default for PlacementOptions {
    fn default() -> Self {
        PlacementOptions {
            max_attempts: 100,
            axial_window: (0.2, 0.8),
            lumen_offset_fraction: 0.2,
            wall_gap_fraction: 0.01,
        }
    }
}

/// A colon with one polyp placed inside it.
#[derive(Debug, Clone)]
pub struct Scene {
    pub colon: ColonModel,
    /// The polyp in world coordinates.
    pub polyp: TriangleMesh,
    pub polyp_transform: RigidTransform,
    pub placement: Placement,
    pub seed: u64,
}

impl Scene {
    /// Largest distance from the polyp centroid to one of its vertices.
    pub fn polyp_radius(&self) -> f64 {
        self.polyp.bounding_radius()
    }

    /// Same scene without the polyp: the polyp mesh is emptied.
    pub fn without_polyp(&self) -> Scene {
        let mut s = self.clone();
        s.polyp.vertices.clear();
        s.polyp.faces.clear();
        s.polyp.normals.clear();
        s
    }
}

/// Uniform random rotation (Shoemake's subgroup algorithm).
fn random_rotation<R: Rng>(rng: &mut R) -> Mat3 {
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    Mat3::from_quaternion(
        b * (2.0 * PI * u3).cos(),
        a * (2.0 * PI * u2).sin(),
        a * (2.0 * PI * u2).cos(),
        b * (2.0 * PI * u3).sin(),
    )
}

/// Places `polyp` (given in local coordinates) inside `colon`.
///
/// Wall polyps are pushed outward from the centerline until the nearest
/// vertex leaves a small gap to the wall; lumen polyps are offset from the
/// centerline by at most `lumen_offset_fraction` of the local radius. Every
/// candidate is rejected unless all polyp vertices are inside the tube.
pub fn assemble_scene(
    colon: &ColonModel,
    polyp: &TriangleMesh,
    placement: Placement,
    seed: u64,
    options: &PlacementOptions,
) -> Result<Scene, GeometryError> {
    colon.mesh.validate()?;
    polyp.validate()?;
    let mut rng = seed::stream_rng(seed, seed::Stream::Placement);
    let centroid = polyp.centroid();
    let local: Vec<Vec3> = polyp.vertices.iter().map(|&v| v - centroid).collect();
    let radius = local.iter().map(|v| v.length()).fold(0.0, f64::max);
    let gap = options.wall_gap_fraction * radius;
    let (w0, w1) = options.axial_window;

    for _ in 0..options.max_attempts {
        let z = colon.spec.length * rng.random_range(w0..=w1);
        let phi = rng.random_range(0.0..2.0 * PI);
        let rotation = random_rotation(&mut rng);
        let offset_draw: f64 = rng.random();
        let rotated: Vec<Vec3> = local.iter().map(|&v| rotation.apply(v)).collect();
        let axis_point = colon.centerline_at(z);
        let dir = Vec3::new(phi.cos(), phi.sin(), 0.0);
        let local_radius = colon.radius_at(z);

        let center = match placement {
            Placement::Lumen => {
                let d = offset_draw * options.lumen_offset_fraction * local_radius;
                let center = axis_point + dir * d;
                if !all_inside(colon, &rotated, center, gap) {
                    continue;
                }
                center
            }
            Placement::Wall => match push_to_wall(colon, &rotated, axis_point, dir, local_radius, gap) {
                Some(center) => center,
                None => continue,
            },
        };

        let transform = RigidTransform { rotation, translation: center, scale: 1.0 };
        let placed: Vec<Vec3> = rotated.iter().map(|&v| v + center).collect();
        let world = TriangleMesh::new(polyp.object_name.clone(), placed, polyp.faces.clone());
        let world_radius = world.bounding_radius();
        let c = world.centroid();
        let ok = match placement {
            Placement::Wall => colon.nearest_face_distance(c) <= world_radius,
            Placement::Lumen => {
                let axis = colon.centerline_at(c.z);
                Vec3::new(c.x - axis.x, c.y - axis.y, 0.0).length() <= 0.25 * colon.radius_at(c.z)
            }
        };
        if !ok {
            continue;
        }
        return Ok(Scene {
            colon: colon.clone(),
            polyp: world,
            polyp_transform: transform,
            placement,
            seed,
        });
    }
    Err(GeometryError::PlacementFailed { attempts: options.max_attempts })
}

/// Exact containment check for the vertices the cheap bound cannot clear.
fn all_inside(colon: &ColonModel, verts: &[Vec3], center: Vec3, gap: f64) -> bool {
    verts.iter().all(|&v| {
        let p = v + center;
        colon.clearance_lower_bound(p) >= gap || colon.signed_distance(p) <= -gap
    })
}

fn min_lower_bound(colon: &ColonModel, verts: &[Vec3], center: Vec3) -> f64 {
    verts
        .iter()
        .map(|&v| colon.clearance_lower_bound(v + center))
        .fold(f64::INFINITY, f64::min)
}

fn push_to_wall(
    colon: &ColonModel,
    verts: &[Vec3],
    axis_point: Vec3,
    dir: Vec3,
    local_radius: f64,
    gap: f64,
) -> Option<Vec3> {
    // Stage 1: largest offset the conservative bound certifies.
    if min_lower_bound(colon, verts, axis_point) < gap {
        return None;
    }
    let (mut lo, mut hi) = (0.0, local_radius);
    for _ in 0..24 {
        let mid = 0.5 * (lo + hi);
        if min_lower_bound(colon, verts, axis_point + dir * mid) >= gap {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let safe = lo;

    // Stage 2: close the remaining slack with exact signed distances, only
    // on vertices whose bound leaves them within reach of the wall.
    let base = axis_point + dir * safe;
    let bounds: Vec<f64> = verts.iter().map(|&v| colon.clearance_lower_bound(v + base)).collect();
    let slack = 3f64.sqrt() * colon.jitter_at(axis_point.z) * 2.0 + 0.05 * local_radius;
    let exact_ok = |extra: f64| -> bool {
        let c = base + dir * extra;
        verts.iter().zip(&bounds).all(|(&v, &b)| b - extra >= gap || colon.signed_distance(v + c) <= -gap)
    };
    let (mut lo, mut hi) = (0.0, slack);
    if exact_ok(hi) {
        lo = hi;
    } else {
        for _ in 0..14 {
            let mid = 0.5 * (lo + hi);
            if exact_ok(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    Some(base + dir * lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{generate_colon, generate_polyp, ColonSpec, PolypSpec};

    fn fixture(placement: Placement, seed: u64) -> Scene {
        let colon = generate_colon(&ColonSpec::default(), seed).unwrap();
        let polyp = generate_polyp(&PolypSpec { placement, ..PolypSpec::default() }, seed).unwrap();
        assemble_scene(&colon, &polyp, placement, seed, &PlacementOptions::default()).unwrap()
    }

    #[test]
    fn wall_polyp_touches_wall() {
        for seed in 0..4 {
            let scene = fixture(Placement::Wall, seed);
            let c = scene.polyp.centroid();
            assert!(scene.colon.nearest_face_distance(c) <= scene.polyp_radius());
            assert!(scene.polyp.vertices.iter().all(|&v| scene.colon.signed_distance(v) < 0.0));
        }
    }

    #[test]
    fn lumen_polyp_near_centerline() {
        for seed in 0..4 {
            let scene = fixture(Placement::Lumen, seed);
            let c = scene.polyp.centroid();
            let axis = scene.colon.centerline_at(c.z);
            let off = Vec3::new(c.x - axis.x, c.y - axis.y, 0.0).length();
            assert!(off <= 0.25 * scene.colon.radius_at(c.z));
        }
    }

    #[test]
    fn deterministic_placement() {
        let a = fixture(Placement::Wall, 17);
        let b = fixture(Placement::Wall, 17);
        assert_eq!(a.polyp.vertices, b.polyp.vertices);
    }

    #[test]
    fn oversized_polyp_fails_placement() {
        let colon = generate_colon(&ColonSpec::default(), 1).unwrap();
        let polyp = generate_polyp(&PolypSpec { base_radius: 3.0, ..PolypSpec::default() }, 1).unwrap();
        let opts = PlacementOptions { max_attempts: 5, ..PlacementOptions::default() };
        let err = assemble_scene(&colon, &polyp, Placement::Wall, 1, &opts).unwrap_err();
        assert!(matches!(err, GeometryError::PlacementFailed { attempts: 5 }));
    }
}
