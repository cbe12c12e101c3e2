use std::io::{self, Write};

use crate::geometry::{Scene, TriangleMesh, Vec3};

/// One `o` group of an OBJ file, with 0-based local face indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjObject {
    pub name: String,
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
}

impl From<&TriangleMesh> for ObjObject {
    fn from(m: &TriangleMesh) -> Self {
        ObjObject { name: m.object_name.clone(), vertices: m.vertices.clone(), faces: m.faces.clone() }
    }
}

struct Counting<W> {
    inner: W,
    bytes: usize,
}

impl<W: Write> Write for Counting<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.bytes += n;
        Ok(n)
    }
    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

/// Writes objects in order. Face indices are 1-based and global across
/// objects, as OBJ requires. Returns the byte count.
pub fn write_obj<W: Write>(objects: &[ObjObject], sink: W) -> io::Result<usize> {
    let mut w = Counting { inner: io::BufWriter::new(sink), bytes: 0 };
    let mut base = 1u64;
    for obj in objects {
        writeln!(w, "o {}", obj.name)?;
        for v in &obj.vertices {
            writeln!(w, "v {:.6} {:.6} {:.6}", v.x, v.y, v.z)?;
        }
        for f in &obj.faces {
            writeln!(w, "f {} {} {}", base + f[0] as u64, base + f[1] as u64, base + f[2] as u64)?;
        }
        base += obj.vertices.len() as u64;
    }
    w.flush()?;
    Ok(w.bytes)
}

/// The colon group followed by the polyp group.
pub fn export_obj<W: Write>(scene: &Scene, sink: W) -> io::Result<usize> {
    let mut polyp = ObjObject::from(&scene.polyp);
    polyp.name = "polyp".into();
    let mut colon = ObjObject::from(&scene.colon.mesh);
    colon.name = "colon".into();
    write_obj(&[colon, polyp], sink)
}

fn bad(line: usize, msg: impl std::fmt::Display) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, format!("obj line {line}: {msg}"))
}

/// Parses the subset written by [`write_obj`]: `o`, `v` and triangular `f`
/// records (`f a/b/c` forms keep the vertex index). Other records are skipped.
pub fn parse_obj(text: &str) -> io::Result<Vec<ObjObject>> {
    let mut objects: Vec<ObjObject> = Vec::new();
    let mut total_vertices = 0usize;
    let mut base = 0usize;
    for (ln, line) in text.lines().enumerate() {
        let ln = ln + 1;
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("o") => {
                base = total_vertices;
                objects.push(ObjObject {
                    name: parts.collect::<Vec<_>>().join(" "),
                    vertices: Vec::new(),
                    faces: Vec::new(),
                });
            }
            Some("v") => {
                let c: Vec<f64> = parts
                    .take(3)
                    .map(|s| s.parse::<f64>().map_err(|e| bad(ln, e)))
                    .collect::<io::Result<_>>()?;
                if c.len() != 3 {
                    return Err(bad(ln, "vertex needs 3 coordinates"));
                }
                let obj = objects.last_mut().ok_or_else(|| bad(ln, "vertex before any object"))?;
                obj.vertices.push(Vec3::new(c[0], c[1], c[2]));
                total_vertices += 1;
            }
            Some("f") => {
                let idx: Vec<usize> = parts
                    .map(|s| s.split('/').next().unwrap_or("").parse::<usize>().map_err(|e| bad(ln, e)))
                    .collect::<io::Result<_>>()?;
                if idx.len() != 3 {
                    return Err(bad(ln, "only triangular faces are supported"));
                }
                let obj = objects.last_mut().ok_or_else(|| bad(ln, "face before any object"))?;
                let mut face = [0u32; 3];
                for (k, &i) in idx.iter().enumerate() {
                    if i <= base || i > base + obj.vertices.len() {
                        return Err(bad(ln, format!("index {i} outside object vertices")));
                    }
                    face[k] = (i - 1 - base) as u32;
                }
                obj.faces.push(face);
            }
            _ => {}
        }
    }
    Ok(objects)
}
