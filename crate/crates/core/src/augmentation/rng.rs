use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Which random decision a stream feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Technique {
    Crop = 1,
    Flip = 2,
    Jitter = 3,
    Pca = 4,
    Shuffle = 5,
}

/// Identifies one sample's augmentation draws in one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SampleKey {
    pub seed: u64,
    pub epoch: u64,
    pub sample_index: u64,
}

impl SampleKey {
    pub fn new(seed: u64, epoch: u64, sample_index: u64) -> Self {
        Self {
            seed,
            epoch,
            sample_index,
        }
    }

    pub fn stream(&self, technique: Technique) -> RngStream {
        RngStream::new(self.seed, self.epoch, self.sample_index, technique)
    }
}

/// Random stream keyed by `(seed, epoch, sample, technique)`.
///
/// The key is the ChaCha seed, so equal keys replay equal sequences and any
/// change in the key gives an unrelated stream, independent of worker count
/// or iteration order.
#[derive(Debug, Clone)]
pub struct RngStream(ChaCha8Rng);

impl RngStream {
    pub fn new(seed: u64, epoch: u64, sample_index: u64, technique: Technique) -> Self {
        let mut key = [0u8; 32];
        for (chunk, word) in key
            .chunks_exact_mut(8)
            .zip([seed, epoch, sample_index, technique as u64])
        {
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        Self(ChaCha8Rng::from_seed(key))
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}
