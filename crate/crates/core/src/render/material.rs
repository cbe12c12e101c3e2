use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seed;

/// Surface appearance shared by the colon and the polyp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Material {
    pub base_color: [f64; 3],
    /// Half-width of the per-channel uniform tone shift applied per sample.
    pub noise_amplitude: f64,
    pub specular_strength: f64,
    pub specular_exponent: f64,
}

impl Default for Material {
    fn default() -> Self {
        Material {
            base_color: [0.80, 0.13, 0.18],
            noise_amplitude: 0.20,
            specular_strength: 0.35,
            specular_exponent: 24.0,
        }
    }
}

/// Shifts each channel of the base color by independent uniform noise in
/// `[-noise_amplitude, noise_amplitude]`, clamped to `[0, 1]`. One draw per
/// sample, so the whole image changes tone together.
pub fn jitter_material(material: &Material, seed: u64) -> Material {
    let amp = material.noise_amplitude;
    if amp == 0.0 {
        return *material;
    }
    let mut rng = seed::stream_rng(seed, seed::Stream::Material);
    let mut out = *material;
    for c in out.base_color.iter_mut() {
        *c = (*c + rng.random_range(-amp..=amp)).clamp(0.0, 1.0);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_amplitude_is_identity() {
        let m = Material { noise_amplitude: 0.0, ..Material::default() };
        for seed in 0..10 {
            assert_eq!(jitter_material(&m, seed), m);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let m = Material::default();
        assert_eq!(jitter_material(&m, 5), jitter_material(&m, 5));
        assert_ne!(jitter_material(&m, 5).base_color, jitter_material(&m, 6).base_color);
    }

    #[test]
    fn channels_stay_in_band_and_unit_interval() {
        let m = Material::default();
        for seed in 0..2000 {
            let j = jitter_material(&m, seed);
            for (c, b) in j.base_color.iter().zip(m.base_color) {
                assert!((0.0..=1.0).contains(c));
                assert!((c - b).abs() <= 0.20 + 1e-12);
            }
        }
    }
}
