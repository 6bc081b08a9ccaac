use std::path::{Path, PathBuf};

use super::dataset::Dataset;
use crate::augmentation::Image;
use crate::error::{Error, Result};

/// One label byte followed by a planar 32×32 RGB image.
pub const CIFAR10_RECORD_BYTES: usize = 1 + 3 * 32 * 32;
pub const CIFAR10_CLASSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Decodes concatenated CIFAR-10 records. `source` names the input in errors.
pub fn parse_cifar10_records(bytes: &[u8], source: &str) -> Result<(Vec<Image>, Vec<usize>)> {
    if !bytes.len().is_multiple_of(CIFAR10_RECORD_BYTES) {
        return Err(Error::Format {
            what: "CIFAR-10 file",
            record: source.to_string(),
            detail: format!("length {} is not a multiple of {CIFAR10_RECORD_BYTES}", bytes.len()),
        });
    }
    let n = bytes.len() / CIFAR10_RECORD_BYTES;
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (i, rec) in bytes.chunks_exact(CIFAR10_RECORD_BYTES).enumerate() {
        let label = rec[0] as usize;
        if label >= CIFAR10_CLASSES {
            return Err(Error::Format {
                what: "CIFAR-10 file",
                record: format!("{source} record {i}"),
                detail: format!("label {label} ≥ {CIFAR10_CLASSES}"),
            });
        }
        labels.push(label);
        images.push(Image::from_planar_rgb8(32, 32, &rec[1..])?);
    }
    Ok((images, labels))
}

pub fn load_cifar10_file(path: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (images, labels) = parse_cifar10_records(&bytes, &path.display().to_string())?;
    Dataset::new(images, labels, CIFAR10_CLASSES, split.name())
}

/// Reads `data_batch_{1..5}.bin` (train, whichever exist) or
/// `test_batch.bin` (test) from `dir`, in file order.
pub fn load_cifar10_binary(dir: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let dir = dir.as_ref();
    let files: Vec<PathBuf> = match split {
        Split::Train => (1..=5)
            .map(|i| dir.join(format!("data_batch_{i}.bin")))
            .filter(|p| p.is_file())
            .collect(),
        Split::Test => vec![dir.join("test_batch.bin")],
    };
    if files.is_empty() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no data_batch_*.bin files"),
        ));
    }
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for f in &files {
        let bytes = std::fs::read(f).map_err(|e| Error::io(f, e))?;
        let (im, lb) = parse_cifar10_records(&bytes, &f.display().to_string())?;
        images.extend(im);
        labels.extend(lb);
    }
    Dataset::new(images, labels, CIFAR10_CLASSES, split.name())
}
