//! Image corruption: random rotation plus heavy additive Gaussian noise.

use super::idx::ImageSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

pub const ROTATION_RANGE_DEG: f64 = 30.0;
pub const NOISE_SD: f64 = 1.3;

/// Rotate an image counterclockwise about its center by `angle_rad`, with
/// bilinear interpolation and zero padding. Rows index down; a dot below the
/// center moves to the right of the center under a +90° rotation.
pub fn rotate_image(img: &[f64], width: usize, height: usize, angle_rad: f64) -> Vec<f64> {
    assert_eq!(img.len(), width * height);
    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0;
    let (sin, cos) = angle_rad.sin_cos();
    let mut out = vec![0.0; img.len()];
    for r in 0..height {
        for c in 0..width {
            // Sample the source at the inverse rotation of this output
            // pixel, in (x right, y up) coordinates.
            let x = c as f64 - cx;
            let y = cy - r as f64;
            let sx = cos * x + sin * y + cx;
            let sy_up = -sin * x + cos * y;
            let sy = cy - sy_up;
            out[r * width + c] = bilinear(img, width, height, sx, sy);
        }
    }
    out
}

fn bilinear(img: &[f64], width: usize, height: usize, x: f64, y: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let dx = x - x0;
    let dy = y - y0;
    let mut acc = 0.0;
    for (ox, oy, w) in [
        (0.0, 0.0, (1.0 - dx) * (1.0 - dy)),
        (1.0, 0.0, dx * (1.0 - dy)),
        (0.0, 1.0, (1.0 - dx) * dy),
        (1.0, 1.0, dx * dy),
    ] {
        let xi = x0 + ox;
        let yi = y0 + oy;
        if xi >= 0.0 && yi >= 0.0 && (xi as usize) < width && (yi as usize) < height && w != 0.0 {
            acc += w * img[yi as usize * width + xi as usize];
        }
    }
    acc
}

/// Apply the corruption to every image: rotation uniform in ±30° about the
/// center, then i.i.d. N(0, 1.3²) per pixel. Deterministic per
/// (seed, image index); corrupted pixels are left unclipped.
pub fn corrupt(images: &ImageSet, seed: u64) -> ImageSet {
    let corrupted: Vec<Vec<f64>> = images
        .images
        .par_iter()
        .enumerate()
        .map(|(i, img)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let angle_deg: f64 = rng.random_range(-ROTATION_RANGE_DEG..ROTATION_RANGE_DEG);
            let mut rotated =
                rotate_image(img, images.width, images.height, angle_deg.to_radians());
            for px in rotated.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *px += NOISE_SD * z;
            }
            rotated
        })
        .collect();
    ImageSet {
        images: corrupted,
        labels: images.labels.clone(),
        width: images.width,
        height: images.height,
    }
}
