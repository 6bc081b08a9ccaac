use crate::error::{Error, Result};

/// RGB image with interleaved floating-point samples, nominally in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

pub const CHANNELS: usize = 3;

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("image", "dimensions must be positive"));
        }
        if pixels.len() != height * width * CHANNELS {
            return Err(Error::invalid(
                "image",
                format!(
                    "{height}×{width} RGB needs {} samples, got {}",
                    height * width * CHANNELS,
                    pixels.len()
                ),
            ));
        }
        Ok(Self { height, width, pixels })
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let pixels = std::iter::repeat_n(rgb, height * width).flatten().collect();
        Self { height, width, pixels }
    }

    /// From interleaved 8-bit RGB.
    pub fn from_rgb8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(height, width, bytes.iter().map(|&b| f64::from(b)).collect())
    }

    /// From channel-planar 8-bit data (all R, then all G, then all B).
    pub fn from_planar_rgb8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        let plane = height * width;
        if bytes.len() != plane * CHANNELS {
            return Err(Error::invalid(
                "image",
                format!(
                    "planar {height}×{width} RGB needs {} bytes, got {}",
                    plane * CHANNELS,
                    bytes.len()
                ),
            ));
        }
        let pixels = (0..plane)
            .flat_map(|i| (0..CHANNELS).map(move |c| f64::from(bytes[c * plane + i])))
            .collect();
        Self::new(height, width, pixels)
    }

    /// Interleaved 8-bit RGB, rounding and clamping to `[0, 255]`.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn get(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, y: usize, x: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * CHANNELS;
        self.pixels[i..i + CHANNELS].copy_from_slice(&rgb);
    }

    pub fn rgb(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        self.pixels.chunks_exact(CHANNELS).map(|p| [p[0], p[1], p[2]])
    }

    pub fn rgb_mut(&mut self) -> impl Iterator<Item = &mut [f64]> + '_ {
        self.pixels.chunks_exact_mut(CHANNELS)
    }

    pub fn clamp(&mut self) {
        self.pixels.iter_mut().for_each(|v| *v = v.clamp(0.0, 255.0));
    }
}

/// ITU-R BT.601 luma.
pub fn luma(rgb: [f64; 3]) -> f64 {
    0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]
}
