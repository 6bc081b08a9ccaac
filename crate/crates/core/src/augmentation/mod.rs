//! Online training-time image augmentation with keyed randomness.

mod image;
mod pca;
mod pipeline;
mod rng;
mod transforms;

pub use image::{luma, Image, CHANNELS};
pub use pca::{fit_pca_basis, pca_noise, rgb_covariance, PcaBasis};
pub use pipeline::{augment_image, augment_pipeline, channel_means, eval_transform, AugmentConfig};
pub use rng::{RngStream, SampleKey, Technique};
pub use transforms::{
    apply_jitter, center_crop, color_jitter, crop_at, epoch_shuffle, flip_horizontal, horizontal_flip, normalize, pad,
    random_crop, JitterFactors, JitterOp, JitterStrength,
};
