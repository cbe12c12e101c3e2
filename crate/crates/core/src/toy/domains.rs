//! Toy image domains: a tube seen from inside with one blob-shaped polyp.
//!
//! Both domains share the scene family. The synthetic one is flat shaded
//! with exact masks; the real-style one adds colour shift, folds, specular
//! spots and sensor noise.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::image::{Mask, RgbImage};
use crate::seed::{derive, rng};

/// Minimum polyp area fraction, same filter as the dataset builder.
pub const MIN_MASK_FRACTION: f64 = 0.026;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Style {
    Synthetic,
    Real,
}

/// Geometry of one toy scene, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyScene {
    pub lumen: (f64, f64),
    pub lumen_radius: f64,
    pub polyp: (f64, f64),
    pub polyp_radii: (f64, f64),
    pub polyp_angle: f64,
}

/// Planar CHW image in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ToyImage {
    pub size: usize,
    pub data: Vec<f64>,
}

impl ToyImage {
    pub fn to_rgb(&self) -> RgbImage {
        let n = self.size * self.size;
        let mut img = RgbImage::new(self.size, self.size);
        for i in 0..n {
            for c in 0..3 {
                img.data[i * 3 + c] = (self.data[c * n + i].clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
        img
    }
}

#[derive(Debug, Clone)]
pub struct ToySample {
    pub scene: ToyScene,
    pub image: ToyImage,
    pub mask: Mask,
}

impl ToySample {
    pub fn mask_fraction(&self) -> f64 {
        self.mask.foreground_count() as f64 / self.mask.len() as f64
    }
}

fn inside(scene: &ToyScene, x: f64, y: f64) -> bool {
    let (dx, dy) = (x - scene.polyp.0, y - scene.polyp.1);
    let (s, c) = scene.polyp_angle.sin_cos();
    let u = (c * dx + s * dy) / scene.polyp_radii.0;
    let v = (-s * dx + c * dy) / scene.polyp_radii.1;
    u * u + v * v <= 1.0
}

fn polyp_mask(scene: &ToyScene, size: usize) -> Mask {
    Mask::from_fn(size, size, |x, y| inside(scene, x as f64 + 0.5, y as f64 + 0.5))
}

fn sample_scene<R: Rng>(rng: &mut R, size: usize) -> ToyScene {
    let s = size as f64 / 64.0;
    let lumen = (rng.random_range(20.0..44.0) * s, rng.random_range(20.0..44.0) * s);
    let lumen_radius = rng.random_range(6.0..11.0) * s;
    let polyp_radii = (rng.random_range(7.0..13.0) * s, rng.random_range(7.0..13.0) * s);
    let polyp_angle = rng.random_range(0.0..std::f64::consts::PI);
    let r = polyp_radii.0.max(polyp_radii.1);
    let mut polyp = (0.0, 0.0);
    // Keep the blob on the wall, clear of the lumen where possible.
    for _ in 0..64 {
        polyp = (rng.random_range(r..size as f64 - r), rng.random_range(r..size as f64 - r));
        let d = ((polyp.0 - lumen.0).powi(2) + (polyp.1 - lumen.1).powi(2)).sqrt();
        if d > lumen_radius + r + 2.0 * s {
            break;
        }
    }
    ToyScene { lumen, lumen_radius, polyp, polyp_radii, polyp_angle }
}

fn render<R: Rng>(scene: &ToyScene, style: Style, size: usize, rng: &mut R) -> ToyImage {
    let n = size * size;
    let mut data = vec![0.0; 3 * n];
    let (wall, lumen_col, polyp_col) = match style {
        Style::Synthetic => ([0.75, 0.32, 0.32], [0.10, 0.03, 0.03], [0.92, 0.62, 0.42]),
        Style::Real => ([0.86, 0.52, 0.42], [0.16, 0.08, 0.06], [0.97, 0.74, 0.60]),
    };
    let noise = Normal::new(0.0, 0.045).expect("valid sigma");
    let fold_phase = rng.random_range(0.0..std::f64::consts::TAU);
    let fold_freq = rng.random_range(5.0..9.0);
    let spots: Vec<(f64, f64, f64)> = (0..rng.random_range(2..5))
        .map(|_| (rng.random_range(0.0..size as f64), rng.random_range(0.0..size as f64), rng.random_range(1.0..2.5)))
        .collect();
    let reach = size as f64 * 0.45;
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let (dx, dy) = (px - scene.lumen.0, py - scene.lumen.1);
            let d = (dx * dx + dy * dy).sqrt();
            let mut rgb = if d < scene.lumen_radius {
                lumen_col
            } else {
                let b = 0.35 + 0.65 * ((d - scene.lumen_radius) / reach).min(1.0);
                wall.map(|c| c * b)
            };
            if inside(scene, px, py) {
                let (qx, qy) = (px - scene.polyp.0, py - scene.polyp.1);
                let rr = (qx * qx + qy * qy).sqrt() / scene.polyp_radii.0.max(scene.polyp_radii.1);
                let shade = 0.85 + 0.15 * (1.0 - rr).max(0.0);
                rgb = polyp_col.map(|c| c * shade);
            }
            if style == Style::Real {
                let fold = 1.0 + 0.12 * (dy.atan2(dx) * fold_freq + d * 0.35 + fold_phase).sin();
                let spec: f64 = spots
                    .iter()
                    .map(|&(sx, sy, r)| (-((px - sx).powi(2) + (py - sy).powi(2)) / (2.0 * r * r)).exp())
                    .sum();
                for c in &mut rgb {
                    *c = *c * fold + 0.8 * spec + noise.sample(rng);
                }
            }
            for (c, v) in rgb.iter().enumerate() {
                data[c * n + y * size + x] = v.clamp(0.0, 1.0);
            }
        }
    }
    ToyImage { size, data }
}

/// One toy sample. Scenes whose mask falls below [`MIN_MASK_FRACTION`] are
/// redrawn from the same stream, as the dataset builder would reject them.
pub fn make_toy_sample(seed: u64, style: Style, size: usize) -> ToySample {
    let mut r = rng(seed);
    loop {
        let scene = sample_scene(&mut r, size);
        let mask = polyp_mask(&scene, size);
        if (mask.foreground_count() as f64) < MIN_MASK_FRACTION * mask.len() as f64 {
            continue;
        }
        let image = render(&scene, style, size, &mut r);
        return ToySample { scene, image, mask };
    }
}

const SYNTHETIC_KEY: u64 = 0x7379_6e74;
const VALIDATION_KEY: u64 = 0x7661_6c69;
const REAL_KEY: u64 = 0x7265_616c;

/// Sample `index` of a domain pool. Each sample depends only on
/// `(seed, pool, index)`, so a smaller pool is a prefix of a larger one.
pub fn synthetic_sample(seed: u64, index: usize, size: usize) -> ToySample {
    make_toy_sample(derive(derive(seed, SYNTHETIC_KEY), index as u64), Style::Synthetic, size)
}

pub fn validation_sample(seed: u64, index: usize, size: usize) -> ToySample {
    make_toy_sample(derive(derive(seed, VALIDATION_KEY), index as u64), Style::Synthetic, size)
}

/// Real-style samples keep their masks for diagnostics; training never
/// reads them.
pub fn real_sample(seed: u64, index: usize, size: usize) -> ToySample {
    make_toy_sample(derive(derive(seed, REAL_KEY), index as u64), Style::Real, size)
}

pub struct ToyDomains {
    pub synthetic: Vec<ToySample>,
    pub real: Vec<ToyImage>,
}

/// Synthetic images with masks and real-style images without.
pub fn make_toy_domains(seed: u64, synthetic_count: usize, real_count: usize, size: usize) -> ToyDomains {
    ToyDomains {
        synthetic: (0..synthetic_count).map(|i| synthetic_sample(seed, i, size)).collect(),
        real: (0..real_count).map(|i| real_sample(seed, i, size).image).collect(),
    }
}
