use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{jitter_material, Camera, Light, LightKind, Material, RenderError};
use crate::geometry::{Scene, Vec3};
use crate::image::{DepthMap, Mask, RgbImage};

/// Triangle id of pixels that see no geometry.
pub const NO_HIT: u32 = u32::MAX;

const BAND_ROWS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderOptions {
    pub width: usize,
    pub height: usize,
    /// 2x2 supersampling of the color pass. Mask and depth stay hard.
    pub supersample: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions { width: 500, height: 500, supersample: false }
    }
}

/// Frontmost triangle and its view depth for every pixel.
///
/// Triangle ids enumerate the colon faces first, then the polyp faces.
#[derive(Debug, Clone)]
pub struct GeometryBuffer {
    pub width: usize,
    pub height: usize,
    pub ids: Vec<u32>,
    /// View depth; `f64::INFINITY` where nothing was hit.
    pub depth: Vec<f64>,
    pub colon_faces: u32,
}

impl GeometryBuffer {
    pub fn is_polyp(&self, i: usize) -> bool {
        let id = self.ids[i];
        id != NO_HIT && id >= self.colon_faces
    }

    pub fn polyp_pixels(&self) -> usize {
        (0..self.ids.len()).filter(|&i| self.is_polyp(i)).count()
    }

    pub fn mask(&self) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            data: (0..self.ids.len()).map(|i| self.is_polyp(i)).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FrameSet {
    pub rgb: RgbImage,
    pub mask: Mask,
    /// View depth in scene units; background holds `far`.
    pub depth: DepthMap,
    pub near: f64,
    pub far: f64,
    /// Material after the per-sample color jitter.
    pub material: Material,
}

/// A clipped triangle projected to the screen.
struct ScreenTri {
    id: u32,
    x: [f64; 3],
    y: [f64; 3],
    inv_z: [f64; 3],
    area: f64,
    y_min: usize,
    y_max: usize,
    x_min: usize,
    x_max: usize,
}

fn check_size(width: usize, height: usize) -> Result<(), RenderError> {
    if width < 16 || height < 16 {
        return Err(RenderError::InvalidResolution { width, height });
    }
    Ok(())
}

/// Clips a view-space triangle to `z >= near`. Returns 0, 3 or 4 vertices.
fn clip_near(v: [Vec3; 3], near: f64) -> Vec<Vec3> {
    let mut out = Vec::with_capacity(4);
    for i in 0..3 {
        let a = v[i];
        let b = v[(i + 1) % 3];
        let a_in = a.z >= near;
        let b_in = b.z >= near;
        if a_in {
            out.push(a);
        }
        if a_in != b_in {
            let t = (near - a.z) / (b.z - a.z);
            let mut p = a.lerp(b, t);
            p.z = near;
            out.push(p);
        }
    }
    out
}

fn edge(ax: f64, ay: f64, bx: f64, by: f64, px: f64, py: f64) -> f64 {
    (bx - ax) * (py - ay) - (by - ay) * (px - ax)
}

/// Tie rule for pixels exactly on an edge: of two triangles sharing an
/// edge (both wound positively) exactly one owns it.
fn owns_edge(ax: f64, ay: f64, bx: f64, by: f64) -> bool {
    let dy = by - ay;
    dy > 0.0 || (dy == 0.0 && bx < ax)
}

fn setup(scene: &Scene, camera: &Camera, width: usize, height: usize) -> Vec<ScreenTri> {
    let focal = camera.focal_pixels(height);
    let (cx, cy) = (0.5 * width as f64, 0.5 * height as f64);
    let colon = &scene.colon.mesh;
    let polyp = &scene.polyp;
    let view = |m: &crate::geometry::TriangleMesh| -> Vec<Vec3> { m.vertices.iter().map(|&p| camera.to_view(p)).collect() };
    let colon_view = view(colon);
    let polyp_view = view(polyp);
    let meshes = [(colon, &colon_view, 0u32), (polyp, &polyp_view, colon.faces.len() as u32)];

    let mut tris = Vec::new();
    for (mesh, verts, offset) in meshes {
        for (f, face) in mesh.faces.iter().enumerate() {
            let v = [verts[face[0] as usize], verts[face[1] as usize], verts[face[2] as usize]];
            if v.iter().all(|p| p.z > camera.far) || v.iter().all(|p| p.z < camera.near) {
                continue;
            }
            let poly = clip_near(v, camera.near);
            if poly.len() < 3 {
                continue;
            }
            let proj: Vec<(f64, f64, f64)> =
                poly.iter().map(|p| (cx + focal * p.x / p.z, cy - focal * p.y / p.z, 1.0 / p.z)).collect();
            for k in 1..proj.len() - 1 {
                let mut idx = [0, k, k + 1];
                let mut area = edge(proj[0].0, proj[0].1, proj[k].0, proj[k].1, proj[k + 1].0, proj[k + 1].1);
                if area == 0.0 || !area.is_finite() {
                    continue;
                }
                if area < 0.0 {
                    idx.swap(1, 2);
                    area = -area;
                }
                let x = idx.map(|i| proj[i].0);
                let y = idx.map(|i| proj[i].1);
                let inv_z = idx.map(|i| proj[i].2);
                let lo_x = x.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi_x = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lo_y = y.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi_y = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                // Pixel centers sit at integer + 0.5.
                let first = |lo: f64| (lo - 0.5).ceil().max(0.0);
                let last = |hi: f64, n: usize| (hi - 0.5).floor().min(n as f64 - 1.0);
                let (x0, x1) = (first(lo_x), last(hi_x, width));
                let (y0, y1) = (first(lo_y), last(hi_y, height));
                if x0 > x1 || y0 > y1 {
                    continue;
                }
                tris.push(ScreenTri {
                    id: offset + f as u32,
                    x,
                    y,
                    inv_z,
                    area,
                    x_min: x0 as usize,
                    x_max: x1 as usize,
                    y_min: y0 as usize,
                    y_max: y1 as usize,
                });
            }
        }
    }
    tris
}

/// Visibility pass: z-buffered triangle ids and perspective-correct depth.
pub fn rasterize(scene: &Scene, camera: &Camera, width: usize, height: usize) -> Result<GeometryBuffer, RenderError> {
    camera.validate()?;
    check_size(width, height)?;
    let tris = setup(scene, camera, width, height);

    let n_bands = height.div_ceil(BAND_ROWS);
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); n_bands];
    for (i, t) in tris.iter().enumerate() {
        for bin in &mut bins[t.y_min / BAND_ROWS..=t.y_max / BAND_ROWS] {
            bin.push(i as u32);
        }
    }

    let mut ids = vec![NO_HIT; width * height];
    let mut depth = vec![f64::INFINITY; width * height];
    let far = camera.far;
    ids.par_chunks_mut(width * BAND_ROWS)
        .zip(depth.par_chunks_mut(width * BAND_ROWS))
        .enumerate()
        .for_each(|(band, (ids, depth))| {
            let row0 = band * BAND_ROWS;
            let rows = ids.len() / width;
            for &ti in &bins[band] {
                let t = &tris[ti as usize];
                let (ya, yb) = (t.y_min.max(row0), t.y_max.min(row0 + rows - 1));
                let own = [
                    owns_edge(t.x[1], t.y[1], t.x[2], t.y[2]),
                    owns_edge(t.x[2], t.y[2], t.x[0], t.y[0]),
                    owns_edge(t.x[0], t.y[0], t.x[1], t.y[1]),
                ];
                for py in ya..=yb {
                    let sy = py as f64 + 0.5;
                    for px in t.x_min..=t.x_max {
                        let sx = px as f64 + 0.5;
                        let w = [
                            edge(t.x[1], t.y[1], t.x[2], t.y[2], sx, sy),
                            edge(t.x[2], t.y[2], t.x[0], t.y[0], sx, sy),
                            edge(t.x[0], t.y[0], t.x[1], t.y[1], sx, sy),
                        ];
                        if (0..3).any(|k| w[k] < 0.0 || (w[k] == 0.0 && !own[k])) {
                            continue;
                        }
                        let inv_z = (w[0] * t.inv_z[0] + w[1] * t.inv_z[1] + w[2] * t.inv_z[2]) / t.area;
                        let z = 1.0 / inv_z;
                        if z > far {
                            continue;
                        }
                        let i = (py - row0) * width + px;
                        if z < depth[i] || (z == depth[i] && t.id < ids[i]) {
                            depth[i] = z;
                            ids[i] = t.id;
                        }
                    }
                }
            }
        });

    Ok(GeometryBuffer { width, height, ids, depth, colon_faces: scene.colon.mesh.faces.len() as u32 })
}

struct Shader<'a> {
    scene: &'a Scene,
    camera: &'a Camera,
    lights: &'a [Light],
    material: Material,
}

impl Shader<'_> {
    fn triangle(&self, id: u32) -> ([Vec3; 3], [Vec3; 3]) {
        let colon = &self.scene.colon.mesh;
        let (mesh, f) = if (id as usize) < colon.faces.len() {
            (colon, id as usize)
        } else {
            (&self.scene.polyp, id as usize - colon.faces.len())
        };
        let face = mesh.faces[f];
        let v = face.map(|i| mesh.vertices[i as usize]);
        let n = face.map(|i| mesh.normals[i as usize]);
        (v, n)
    }

    /// Blinn-Phong color of triangle `id` seen along `dir`.
    fn shade(&self, id: u32, dir: Vec3) -> [f64; 3] {
        let (v, n) = self.triangle(id);
        let origin = self.camera.position;
        // Intersect the ray with the triangle's plane for the surface point.
        let e1 = v[1] - v[0];
        let e2 = v[2] - v[0];
        let pv = dir.cross(e2);
        let det = e1.dot(pv);
        let (p, u, w) = if det.abs() > 1e-14 {
            let tv = origin - v[0];
            let u = tv.dot(pv) / det;
            let qv = tv.cross(e1);
            let w = dir.dot(qv) / det;
            let t = e2.dot(qv) / det;
            (origin + dir * t, u.clamp(0.0, 1.0), w.clamp(0.0, 1.0))
        } else {
            ((v[0] + v[1] + v[2]) / 3.0, 1.0 / 3.0, 1.0 / 3.0)
        };
        let mut normal = (n[0] * (1.0 - u - w) + n[1] * u + n[2] * w).normalized();
        if !normal.x.is_finite() || normal.length() < 0.5 {
            normal = e1.cross(e2).normalized();
        }
        let to_eye = -dir;
        if normal.dot(to_eye) < 0.0 {
            normal = -normal;
        }

        let m = &self.material;
        let mut diffuse = [0.0; 3];
        let mut specular = [0.0; 3];
        for light in self.lights {
            match light.kind {
                LightKind::Ambient => {
                    for c in 0..3 {
                        diffuse[c] += light.intensity * light.color[c];
                    }
                }
                LightKind::Point => {
                    let d = light.position - p;
                    let dist = d.length();
                    if dist < 1e-12 {
                        continue;
                    }
                    let l = d / dist;
                    let strength = light.intensity * light.attenuation(dist);
                    let ndl = normal.dot(l).max(0.0);
                    let h = (l + to_eye).normalized();
                    let ndh = if ndl > 0.0 { normal.dot(h).max(0.0).powf(m.specular_exponent) } else { 0.0 };
                    for c in 0..3 {
                        diffuse[c] += strength * light.color[c] * ndl;
                        specular[c] += strength * light.color[c] * ndh;
                    }
                }
            }
        }
        let mut out = [0.0; 3];
        for c in 0..3 {
            out[c] = (m.base_color[c] * diffuse[c] + m.specular_strength * specular[c]).clamp(0.0, 1.0);
        }
        out
    }
}

fn quantize(c: f64) -> u8 {
    (c * 255.0).round() as u8
}

/// Full render: visibility, then shading, mask and depth.
///
/// `seed` drives the per-sample material jitter.
pub fn render(
    scene: &Scene,
    camera: &Camera,
    lights: &[Light],
    material: &Material,
    options: &RenderOptions,
    seed: u64,
) -> Result<FrameSet, RenderError> {
    let gbuf = rasterize(scene, camera, options.width, options.height)?;
    render_from_buffer(scene, camera, lights, material, options, seed, &gbuf)
}

/// Shading stage of [`render`] for a visibility buffer computed earlier at
/// the same resolution.
pub fn render_from_buffer(
    scene: &Scene,
    camera: &Camera,
    lights: &[Light],
    material: &Material,
    options: &RenderOptions,
    seed: u64,
    gbuf: &GeometryBuffer,
) -> Result<FrameSet, RenderError> {
    let (width, height) = (options.width, options.height);
    if gbuf.width != width || gbuf.height != height {
        return Err(RenderError::InvalidResolution { width: gbuf.width, height: gbuf.height });
    }
    let shader = Shader { scene, camera, lights, material: jitter_material(material, seed) };

    let mut rgb = RgbImage::new(width, height);
    if options.supersample {
        let (w2, h2) = (2 * width, 2 * height);
        let fine = rasterize(scene, camera, w2, h2)?;
        rgb.data.par_chunks_mut(width * 3).enumerate().for_each(|(py, row)| {
            for px in 0..width {
                let mut acc = [0.0; 3];
                for (sx, sy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    let (fx, fy) = (2 * px + sx, 2 * py + sy);
                    let id = fine.ids[fy * w2 + fx];
                    if id != NO_HIT {
                        let c = shader.shade(id, camera.pixel_ray(fx, fy, w2, h2));
                        for k in 0..3 {
                            acc[k] += 0.25 * c[k];
                        }
                    }
                }
                for k in 0..3 {
                    row[px * 3 + k] = quantize(acc[k]);
                }
            }
        });
    } else {
        rgb.data.par_chunks_mut(width * 3).enumerate().for_each(|(py, row)| {
            for px in 0..width {
                let id = gbuf.ids[py * width + px];
                if id != NO_HIT {
                    let c = shader.shade(id, camera.pixel_ray(px, py, width, height));
                    for k in 0..3 {
                        row[px * 3 + k] = quantize(c[k]);
                    }
                }
            }
        });
    }

    let depth = DepthMap {
        width,
        height,
        data: gbuf.depth.iter().map(|&d| if d.is_finite() { d } else { camera.far }).collect(),
    };
    Ok(FrameSet { rgb, mask: gbuf.mask(), depth, near: camera.near, far: camera.far, material: shader.material })
}
