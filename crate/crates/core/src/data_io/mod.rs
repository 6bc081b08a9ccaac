//! Datasets (CIFAR-10 binary, synthetic shapes), checkpoints and PPM dumps.

mod checkpoint;
mod cifar;
mod dataset;
mod ppm;
mod synthetic;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use cifar::{
    load_cifar10_binary, load_cifar10_file, parse_cifar10_records, Split, CIFAR10_CLASSES, CIFAR10_RECORD_BYTES,
};
pub use dataset::{Dataset, DatasetMeta};
pub use ppm::{decode_ppm, encode_ppm, read_ppm, write_ppm};
pub use synthetic::{class_template, generate_synthetic, SyntheticSpec};
