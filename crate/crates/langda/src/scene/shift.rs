//! Photometric domain shift applied to target images.
//!
//! Stage order is fixed: hue rotation, brightness scaling, additive Gaussian
//! noise, low-frequency multiplicative texture, then a final clamp to [0, 1].
//! Neutral stages are skipped entirely, so the all-neutral shift leaves the
//! image bit-identical (no clamp either). Masks are never passed here.

use super::DomainShift;
use crate::rng::stream_rng;
use ndarray::Array3;
use rand::Rng;
use rand_distr::{Distribution, Normal};

const TEXTURE_AMPLITUDE: f64 = 0.15;

/// Applies `shift` in place. Randomness (noise draws, texture phases) comes
/// from the dedicated "shift" stream of `seed`.
pub fn apply_shift(image: &mut Array3<f64>, shift: &DomainShift, seed: u64) {
    if shift.is_neutral() {
        return;
    }
    let (_, h, w) = image.dim();
    let mut rng = stream_rng(seed, "shift");
    if shift.hue_shift != 0.0 {
        let m = hue_matrix(shift.hue_shift.to_radians());
        for y in 0..h {
            for x in 0..w {
                let rgb = [image[(0, y, x)], image[(1, y, x)], image[(2, y, x)]];
                for c in 0..3 {
                    image[(c, y, x)] = m[c][0] * rgb[0] + m[c][1] * rgb[1] + m[c][2] * rgb[2];
                }
            }
        }
    }
    if shift.brightness_scale != 1.0 {
        image.mapv_inplace(|v| v * shift.brightness_scale);
    }
    if shift.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, shift.noise_sigma).unwrap();
        image.mapv_inplace(|v| v + normal.sample(&mut rng));
    }
    if shift.texture_freq > 0.0 {
        let phase_x: f64 = rng.random();
        let phase_y: f64 = rng.random();
        let f = shift.texture_freq;
        let tau = std::f64::consts::TAU;
        for y in 0..h {
            for x in 0..w {
                let field = 1.0
                    + TEXTURE_AMPLITUDE
                        * (tau * (f * x as f64 / w as f64 + phase_x)).sin()
                        * (tau * (f * y as f64 / h as f64 + phase_y)).sin();
                for c in 0..3 {
                    image[(c, y, x)] *= field;
                }
            }
        }
    }
    image.mapv_inplace(|v| v.clamp(0.0, 1.0));
}

/// Rotation around the gray axis (1,1,1)/sqrt(3) by `angle` radians, via the
/// Rodrigues formula. Grays are fixed points; angle 0 is the identity.
fn hue_matrix(angle: f64) -> [[f64; 3]; 3] {
    let (sin, cos) = angle.sin_cos();
    let third = (1.0 - cos) / 3.0;
    let s = sin / 3f64.sqrt();
    // Cross-product matrix of the unit gray axis, scaled by sin.
    let skew = [[0.0, -s, s], [s, 0.0, -s], [-s, s, 0.0]];
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = if i == j { cos } else { 0.0 } + third + skew[i][j];
        }
    }
    m
}
