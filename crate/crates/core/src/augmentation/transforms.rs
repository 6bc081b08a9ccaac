use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::image::{luma, Image};
use super::rng::{RngStream, Technique};
use crate::error::{Error, Result};
use crate::tensor_core::Tensor;

/// Zero-padded border of `pad` pixels on every side.
pub fn pad(image: &Image, pad: usize) -> Image {
    if pad == 0 {
        return image.clone();
    }
    let (h, w) = (image.height() + 2 * pad, image.width() + 2 * pad);
    let mut out = Image::filled(h, w, [0.0; 3]);
    for y in 0..image.height() {
        for x in 0..image.width() {
            out.set(y + pad, x + pad, image.get(y, x));
        }
    }
    out
}

pub fn crop_at(image: &Image, top: usize, left: usize, height: usize, width: usize) -> Result<Image> {
    if height == 0 || width == 0 || top + height > image.height() || left + width > image.width() {
        return Err(Error::invalid(
            "crop",
            format!(
                "{height}×{width} window at ({top}, {left}) does not fit a {}×{} image",
                image.height(),
                image.width()
            ),
        ));
    }
    let mut px = Vec::with_capacity(height * width * 3);
    for y in top..top + height {
        let row = &image.pixels()[(y * image.width() + left) * 3..(y * image.width() + left + width) * 3];
        px.extend_from_slice(row);
    }
    Image::new(height, width, px)
}

/// Crop at an offset drawn uniformly from all valid positions.
pub fn random_crop<R: Rng + ?Sized>(image: &Image, out: (usize, usize), rng: &mut R) -> Result<Image> {
    let (h, w) = out;
    if h > image.height() || w > image.width() {
        return Err(Error::invalid(
            "random_crop",
            format!("crop {h}×{w} larger than source {}×{}", image.height(), image.width()),
        ));
    }
    let top = rng.random_range(0..=image.height() - h);
    let left = rng.random_range(0..=image.width() - w);
    crop_at(image, top, left, h, w)
}

/// Centered crop, the deterministic counterpart of [`random_crop`].
pub fn center_crop(image: &Image, out: (usize, usize)) -> Result<Image> {
    let (h, w) = out;
    if h > image.height() || w > image.width() {
        return Err(Error::invalid(
            "center_crop",
            format!("crop {h}×{w} larger than source {}×{}", image.height(), image.width()),
        ));
    }
    crop_at(image, (image.height() - h) / 2, (image.width() - w) / 2, h, w)
}

/// Reverses column order.
pub fn flip_horizontal(image: &Image) -> Image {
    let mut out = image.clone();
    for y in 0..image.height() {
        for x in 0..image.width() {
            out.set(y, x, image.get(y, image.width() - 1 - x));
        }
    }
    out
}

/// Mirrors the image left-right with probability `p`.
pub fn horizontal_flip<R: Rng + ?Sized>(image: &Image, rng: &mut R, p: f64) -> Image {
    let u: f64 = rng.random();
    if u < p {
        flip_horizontal(image)
    } else {
        image.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JitterOp {
    Brightness,
    Contrast,
    Saturation,
}

/// Half-widths of the uniform factor ranges `[1 − s, 1 + s]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JitterStrength {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
}

impl JitterStrength {
    pub fn uniform(s: f64) -> Self {
        Self {
            brightness: s,
            contrast: s,
            saturation: s,
        }
    }
}

impl Default for JitterStrength {
    fn default() -> Self {
        Self::uniform(0.4)
    }
}

/// One concrete draw of color jitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterFactors {
    pub order: [JitterOp; 3],
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
}

impl JitterFactors {
    pub fn sample<R: Rng + ?Sized>(strength: JitterStrength, rng: &mut R) -> Self {
        let mut order = [JitterOp::Brightness, JitterOp::Contrast, JitterOp::Saturation];
        order.shuffle(rng);
        let mut factor = |s: f64| {
            let u: f64 = rng.random();
            1.0 + s * (2.0 * u - 1.0)
        };
        Self {
            order,
            brightness: factor(strength.brightness),
            contrast: factor(strength.contrast),
            saturation: factor(strength.saturation),
        }
    }
}

/// Applies the factors in their stored order, then clamps to `[0, 255]`.
pub fn apply_jitter(image: &Image, f: &JitterFactors) -> Image {
    let mut out = image.clone();
    for op in f.order {
        match op {
            JitterOp::Brightness => out.pixels_mut().iter_mut().for_each(|v| *v *= f.brightness),
            JitterOp::Contrast => {
                let n = (out.height() * out.width()) as f64;
                let mean = out.rgb().map(luma).sum::<f64>() / n;
                let k = f.contrast;
                out.pixels_mut().iter_mut().for_each(|v| *v = k * *v + (1.0 - k) * mean);
            }
            JitterOp::Saturation => {
                let k = f.saturation;
                for px in out.rgb_mut() {
                    let g = luma([px[0], px[1], px[2]]);
                    px.iter_mut().for_each(|v| *v = k * *v + (1.0 - k) * g);
                }
            }
        }
    }
    out.clamp();
    out
}

/// Random brightness, contrast and saturation in a random order.
pub fn color_jitter<R: Rng + ?Sized>(image: &Image, rng: &mut R, strength: JitterStrength) -> Image {
    apply_jitter(image, &JitterFactors::sample(strength, rng))
}

/// Subtracts per-channel means (pixel units) and optionally divides by
/// stds, producing a `[3, h, w]` tensor. No clamping.
pub fn normalize(image: &Image, means: [f64; 3], stds: Option<[f64; 3]>) -> Result<Tensor> {
    if let Some(s) = stds {
        if s.iter().any(|&v| v.is_nan() || v <= 0.0) {
            return Err(Error::invalid("normalize", format!("stds must be positive, got {s:?}")));
        }
    }
    let scale = stds.unwrap_or([1.0; 3]);
    let plane = image.height() * image.width();
    let mut data = vec![0.0; 3 * plane];
    for (i, px) in image.rgb().enumerate() {
        for c in 0..3 {
            data[c * plane + i] = (px[c] - means[c]) / scale[c];
        }
    }
    Tensor::from_vec(&[3, image.height(), image.width()], data)
}

/// Per-epoch permutation of `0..n`, deterministic in `(n, epoch, seed)`.
pub fn epoch_shuffle(n: usize, epoch: u64, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = RngStream::new(seed, epoch, 0, Technique::Shuffle);
    order.shuffle(&mut rng);
    order
}
