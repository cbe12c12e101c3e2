use super::{GeometryError, Vec3};

/// Indexed triangle geometry with per-vertex normals.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    pub normals: Vec<Vec3>,
    pub object_name: String,
}

impl TriangleMesh {
    /// Builds a mesh and derives area-weighted vertex normals from the face winding.
    pub fn new(object_name: impl Into<String>, vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Self {
        let mut mesh = TriangleMesh {
            vertices,
            faces,
            normals: Vec::new(),
            object_name: object_name.into(),
        };
        mesh.recompute_normals();
        mesh
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle(&self, face: usize) -> (Vec3, Vec3, Vec3) {
        let [a, b, c] = self.faces[face];
        (
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        )
    }

    /// Unnormalized face normal (twice the triangle area in length).
    pub fn face_normal(&self, face: usize) -> Vec3 {
        let (a, b, c) = self.triangle(face);
        (b - a).cross(c - a)
    }

    pub fn recompute_normals(&mut self) {
        let mut acc = vec![Vec3::ZERO; self.vertices.len()];
        for f in 0..self.faces.len() {
            let n = self.face_normal(f);
            for &i in &self.faces[f] {
                acc[i as usize] += n;
            }
        }
        self.normals = acc
            .into_iter()
            .map(|n| {
                let u = n.normalized();
                if u.length_squared() > 0.0 {
                    u
                } else {
                    Vec3::Z
                }
            })
            .collect();
    }

    pub fn centroid(&self) -> Vec3 {
        let sum = self.vertices.iter().fold(Vec3::ZERO, |acc, &v| acc + v);
        sum / self.vertices.len().max(1) as f64
    }

    /// Largest distance from the vertex centroid to any vertex.
    pub fn bounding_radius(&self) -> f64 {
        let c = self.centroid();
        self.vertices
            .iter()
            .map(|v| v.distance(c))
            .fold(0.0, f64::max)
    }

    /// Applies `p -> rotation * (scale * p) + translation` to every vertex.
    pub fn transformed(&self, transform: &super::RigidTransform) -> TriangleMesh {
        let vertices = self.vertices.iter().map(|&v| transform.apply(v)).collect();
        TriangleMesh::new(self.object_name.clone(), vertices, self.faces.clone())
    }

    /// Checks the structural invariants: non-empty, in-range, non-repeating
    /// face indices and unit normals.
    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.faces.is_empty() {
            return Err(GeometryError::InvalidMesh(format!("{}: no faces", self.object_name)));
        }
        if self.normals.len() != self.vertices.len() {
            return Err(GeometryError::InvalidMesh(format!(
                "{}: {} normals for {} vertices",
                self.object_name,
                self.normals.len(),
                self.vertices.len()
            )));
        }
        let n = self.vertices.len() as u32;
        for (fi, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&i| i >= n) {
                return Err(GeometryError::InvalidMesh(format!(
                    "{}: face {fi} indexes past {n} vertices",
                    self.object_name
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(GeometryError::InvalidMesh(format!(
                    "{}: face {fi} repeats a vertex",
                    self.object_name
                )));
            }
        }
        if let Some(i) = self
            .normals
            .iter()
            .position(|nv| (nv.length() - 1.0).abs() > 1e-6)
        {
            return Err(GeometryError::InvalidMesh(format!(
                "{}: normal {i} is not unit length",
                self.object_name
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) fn unit_cube() -> TriangleMesh {
    let v = |x: f64, y: f64, z: f64| Vec3::new(x, y, z);
    let vertices = vec![
        v(0.0, 0.0, 0.0),
        v(1.0, 0.0, 0.0),
        v(1.0, 1.0, 0.0),
        v(0.0, 1.0, 0.0),
        v(0.0, 0.0, 1.0),
        v(1.0, 0.0, 1.0),
        v(1.0, 1.0, 1.0),
        v(0.0, 1.0, 1.0),
    ];
    let faces = vec![
        [0, 2, 1],
        [0, 3, 2],
        [4, 5, 6],
        [4, 6, 7],
        [0, 1, 5],
        [0, 5, 4],
        [1, 2, 6],
        [1, 6, 5],
        [2, 3, 7],
        [2, 7, 6],
        [3, 0, 4],
        [3, 4, 7],
    ];
    TriangleMesh::new("cube", vertices, faces)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cube_is_valid_with_outward_normals() {
        let cube = unit_cube();
        cube.validate().unwrap();
        let c = cube.centroid();
        for (v, n) in cube.vertices.iter().zip(&cube.normals) {
            assert!((*v - c).dot(*n) > 0.0);
        }
    }

    #[test]
    fn repeated_index_is_rejected() {
        let mut cube = unit_cube();
        cube.faces[3] = [4, 4, 7];
        assert!(matches!(cube.validate(), Err(GeometryError::InvalidMesh(_))));
    }

    #[test]
    fn out_of_range_index_is_rejected() {
        let mut cube = unit_cube();
        cube.faces[0] = [0, 2, 8];
        assert!(cube.validate().is_err());
    }
}
