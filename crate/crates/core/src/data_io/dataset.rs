use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augmentation::Image;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub num_classes: usize,
    pub height: usize,
    pub width: usize,
    pub split: String,
    /// Hex digest of labels and pixel bytes.
    pub fingerprint: String,
}

/// Labeled 8-bit RGB images, all the same size.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<Image>,
    pub labels: Vec<usize>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(images: Vec<Image>, labels: Vec<usize>, num_classes: usize, split: &str) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::invalid(
                "dataset",
                format!("{} images but {} labels", images.len(), labels.len()),
            ));
        }
        let (height, width) = images.first().map_or((0, 0), |i| (i.height(), i.width()));
        for (i, (img, &y)) in images.iter().zip(&labels).enumerate() {
            if (img.height(), img.width()) != (height, width) {
                return Err(Error::invalid(
                    "dataset",
                    format!(
                        "sample {i} is {}×{}, expected {height}×{width}",
                        img.height(),
                        img.width()
                    ),
                ));
            }
            if y >= num_classes {
                return Err(Error::invalid(
                    "dataset",
                    format!("sample {i} has label {y}, expected < {num_classes}"),
                ));
            }
        }
        let fingerprint = fingerprint(&images, &labels);
        Ok(Self {
            images,
            labels,
            meta: DatasetMeta {
                num_classes,
                height,
                width,
                split: split.to_string(),
                fingerprint,
            },
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// The first `n` samples (all of them if `n` is larger).
    pub fn take(&self, n: usize) -> Result<Self> {
        let n = n.min(self.len());
        Self::new(
            self.images[..n].to_vec(),
            self.labels[..n].to_vec(),
            self.meta.num_classes,
            &self.meta.split,
        )
    }
}

fn fingerprint(images: &[Image], labels: &[usize]) -> String {
    let mut h = Sha256::new();
    for (img, &y) in images.iter().zip(labels) {
        h.update((y as u64).to_le_bytes());
        h.update((img.height() as u64).to_le_bytes());
        h.update((img.width() as u64).to_le_bytes());
        for v in img.pixels() {
            h.update(v.to_le_bytes());
        }
    }
    hex(&h.finalize()[..8])
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
