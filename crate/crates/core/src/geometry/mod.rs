//! Procedural colon and polyp geometry.

mod colon;
mod mesh;
mod polyp;
mod scene;
mod vec3;

pub use colon::{generate_colon, ColonModel, ColonSpec};
pub use mesh::TriangleMesh;
pub use polyp::{generate_polyp, Placement, PolypSpec};
pub use scene::{assemble_scene, PlacementOptions, RigidTransform, Scene};
pub use vec3::{closest_point_on_triangle, ray_triangle, Mat3, Vec3};

#[cfg(test)]
pub(crate) use mesh::unit_cube;

#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error("invalid geometry spec: {0}")]
    InvalidSpec(String),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("no valid polyp placement found in {attempts} attempts")]
    PlacementFailed { attempts: usize },
}
