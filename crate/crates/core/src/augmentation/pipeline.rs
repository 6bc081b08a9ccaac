use serde::{Deserialize, Serialize};

use super::image::Image;
use super::pca::{pca_noise, PcaBasis};
use super::rng::{SampleKey, Technique};
use super::transforms::{center_crop, color_jitter, horizontal_flip, normalize, pad, random_crop, JitterStrength};
use crate::error::{Error, Result};
use crate::tensor_core::Tensor;

/// Training-time augmentation settings. Every stage can be switched off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub enable_crop: bool,
    /// `[height, width]` of the random crop.
    pub crop_size: [usize; 2],
    /// Zero border added before cropping.
    pub crop_padding: usize,
    pub enable_flip: bool,
    pub flip_probability: f64,
    pub enable_jitter: bool,
    pub jitter: JitterStrength,
    pub enable_pca: bool,
    pub pca_sigma: f64,
    pub enable_normalize: bool,
    /// Per-channel means in pixel units; `None` means fit on the training set.
    pub channel_means: Option<[f64; 3]>,
    pub channel_stds: Option<[f64; 3]>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enable_crop: true,
            crop_size: [32, 32],
            crop_padding: 4,
            enable_flip: true,
            flip_probability: 0.5,
            enable_jitter: true,
            jitter: JitterStrength::default(),
            enable_pca: true,
            pca_sigma: 0.1,
            enable_normalize: true,
            channel_means: None,
            channel_stds: None,
        }
    }
}

impl AugmentConfig {
    /// Everything off; the pipeline then only converts to a tensor.
    pub fn disabled() -> Self {
        Self {
            enable_crop: false,
            enable_flip: false,
            enable_jitter: false,
            enable_pca: false,
            enable_normalize: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return bad(format!(
                "augment.flip_probability = {} not in [0, 1]",
                self.flip_probability
            ));
        }
        let j = self.jitter;
        if [j.brightness, j.contrast, j.saturation, self.pca_sigma]
            .iter()
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            return bad("augment jitter strengths and pca_sigma must be finite and ≥ 0".into());
        }
        if self.crop_size.contains(&0) {
            return bad("augment.crop_size entries must be ≥ 1".into());
        }
        if let Some(s) = self.channel_stds {
            if s.iter().any(|v| v.is_nan() || *v <= 0.0) {
                return bad("augment.channel_stds must be positive".into());
            }
        }
        Ok(())
    }

    /// Checks the crop fits images of the given size.
    pub fn validate_for_source(&self, height: usize, width: usize) -> Result<()> {
        if self.enable_crop {
            let (ph, pw) = (height + 2 * self.crop_padding, width + 2 * self.crop_padding);
            if self.crop_size[0] > ph || self.crop_size[1] > pw {
                return Err(Error::Config(format!(
                    "augment.crop_size {:?} exceeds padded source {ph}×{pw}",
                    self.crop_size
                )));
            }
        }
        Ok(())
    }

    /// Spatial size of pipeline output for a source of the given size.
    pub fn output_size(&self, height: usize, width: usize) -> (usize, usize) {
        if self.enable_crop {
            (self.crop_size[0], self.crop_size[1])
        } else {
            (height, width)
        }
    }

    fn means(&self) -> [f64; 3] {
        if self.enable_normalize {
            self.channel_means.unwrap_or([0.0; 3])
        } else {
            [0.0; 3]
        }
    }

    fn stds(&self) -> Option<[f64; 3]> {
        self.channel_stds.filter(|_| self.enable_normalize)
    }
}

/// Random stages in fixed order: crop → flip → jitter → PCA noise.
/// Output stays within `[0, 255]`.
pub fn augment_image(image: &Image, config: &AugmentConfig, pca: Option<&PcaBasis>, key: SampleKey) -> Result<Image> {
    let mut img = if config.enable_crop {
        let padded = pad(image, config.crop_padding);
        let size = (config.crop_size[0], config.crop_size[1]);
        random_crop(&padded, size, &mut key.stream(Technique::Crop))?
    } else {
        image.clone()
    };
    if config.enable_flip {
        img = horizontal_flip(&img, &mut key.stream(Technique::Flip), config.flip_probability);
    }
    if config.enable_jitter {
        img = color_jitter(&img, &mut key.stream(Technique::Jitter), config.jitter);
    }
    if config.enable_pca {
        let basis = pca.ok_or_else(|| Error::invalid("augment_pipeline", "PCA noise enabled but no basis fitted"))?;
        img = pca_noise(&img, basis, &mut key.stream(Technique::Pca), config.pca_sigma);
    }
    Ok(img)
}

/// Full training transform: [`augment_image`] followed by normalization.
pub fn augment_pipeline(
    image: &Image,
    config: &AugmentConfig,
    pca: Option<&PcaBasis>,
    key: SampleKey,
) -> Result<Tensor> {
    let img = augment_image(image, config, pca, key)?;
    normalize(&img, config.means(), config.stds())
}

/// Evaluation transform: center crop to the training crop size, then normalize.
pub fn eval_transform(image: &Image, config: &AugmentConfig) -> Result<Tensor> {
    let img = if config.enable_crop {
        let size = (config.crop_size[0], config.crop_size[1]);
        if size == (image.height(), image.width()) {
            image.clone()
        } else if size.0 <= image.height() && size.1 <= image.width() {
            center_crop(image, size)?
        } else {
            center_crop(&pad(image, config.crop_padding), size)?
        }
    } else {
        image.clone()
    };
    normalize(&img, config.means(), config.stds())
}

/// Pooled per-channel mean in pixel units.
pub fn channel_means(images: &[Image]) -> [f64; 3] {
    let mut sum = [0.0; 3];
    let mut n = 0usize;
    for img in images {
        for px in img.rgb() {
            (0..3).for_each(|c| sum[c] += px[c]);
            n += 1;
        }
    }
    sum.map(|s| s / n.max(1) as f64)
}
