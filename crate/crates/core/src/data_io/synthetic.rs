use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::augmentation::Image;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub samples_per_class: usize,
    /// Side length of the square images.
    pub image_size: usize,
    /// Std of the Gaussian pixel noise, in pixel units.
    pub noise_std: f64,
}

const BACKGROUND: [f64; 3] = [110.0, 110.0, 110.0];

fn hue_color(c: usize, classes: usize) -> [f64; 3] {
    let h = 6.0 * c as f64 / classes as f64;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    let (r, g, b) = match h as usize {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [r, g, b].map(|v| (30.0 + 200.0 * v).round())
}

/// Noise-free image of class `c`: a colored rectangle on a gray background.
/// Color follows the hue wheel; position cycles over a 3×3 grid.
pub fn class_template(c: usize, classes: usize, size: usize) -> Image {
    let mut img = Image::filled(size, size, BACKGROUND);
    let side = size.div_ceil(2).max(1);
    let slack = size - side;
    let top = (c % 3) * slack / 2;
    let left = ((c / 3) % 3) * slack / 2;
    let color = hue_color(c, classes);
    for y in top..top + side {
        for x in left..left + side {
            img.set(y, x, color);
        }
    }
    img
}

/// Sample `i` has class `i mod K`; pixels are template plus rounded, clamped noise.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    if spec.num_classes < 2 {
        return Err(Error::Config("synthetic num_classes must be ≥ 2".into()));
    }
    if spec.image_size == 0 {
        return Err(Error::Config("synthetic image_size must be ≥ 1".into()));
    }
    if !(spec.noise_std >= 0.0 && spec.noise_std.is_finite()) {
        return Err(Error::Config("synthetic noise_std must be finite and ≥ 0".into()));
    }
    let k = spec.num_classes;
    let templates: Vec<Image> = (0..k).map(|c| class_template(c, k, spec.image_size)).collect();
    let noise = Normal::new(0.0, spec.noise_std).expect("validated std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = k * spec.samples_per_class;
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % k;
        let mut img = templates[c].clone();
        if spec.noise_std > 0.0 {
            for v in img.pixels_mut() {
                *v = (*v + noise.sample(&mut rng)).round().clamp(0.0, 255.0);
            }
        }
        images.push(img);
        labels.push(c);
    }
    Dataset::new(images, labels, k, "synthetic")
}
