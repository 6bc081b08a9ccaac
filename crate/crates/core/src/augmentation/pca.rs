use nalgebra::{Matrix3, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::image::Image;
use crate::error::{Error, Result};

/// Eigensystem of the RGB covariance of a training set.
///
/// All statistics are expressed on unit-scaled colors (pixel / 255), the
/// scale on which lighting noise is conventionally parameterized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaBasis {
    /// Descending, non-negative.
    pub eigenvalues: [f64; 3],
    /// `eigenvectors[i]` pairs with `eigenvalues[i]`; orthonormal.
    pub eigenvectors: [[f64; 3]; 3],
    pub channel_means: [f64; 3],
}

impl PcaBasis {
    /// `Σᵢ λᵢ pᵢ pᵢᵀ`.
    pub fn covariance(&self) -> [[f64; 3]; 3] {
        let mut c = [[0.0; 3]; 3];
        for (lambda, p) in self.eigenvalues.iter().zip(&self.eigenvectors) {
            for r in 0..3 {
                for s in 0..3 {
                    c[r][s] += lambda * p[r] * p[s];
                }
            }
        }
        c
    }

    /// RGB offset in pixel units for draws `alphas`: `255 · Σᵢ αᵢ λᵢ pᵢ`.
    pub fn shift(&self, alphas: [f64; 3]) -> [f64; 3] {
        let mut d = [0.0; 3];
        for ((a, lambda), p) in alphas.iter().zip(&self.eigenvalues).zip(&self.eigenvectors) {
            for c in 0..3 {
                d[c] += a * lambda * p[c];
            }
        }
        d.map(|v| v * 255.0)
    }
}

/// Pooled RGB mean and sample covariance (divisor n − 1) over every pixel.
pub fn rgb_covariance<'a, I>(images: I) -> Result<([f64; 3], [[f64; 3]; 3])>
where
    I: IntoIterator<Item = &'a Image> + Clone,
{
    let mut n = 0usize;
    let mut sum = [0.0; 3];
    for img in images.clone() {
        for px in img.rgb() {
            n += 1;
            (0..3).for_each(|c| sum[c] += px[c] / 255.0);
        }
    }
    if n < 2 {
        return Err(Error::invalid(
            "fit_pca_basis",
            "need at least two pixels to estimate a covariance",
        ));
    }
    let mean = sum.map(|s| s / n as f64);
    let mut cov = [[0.0; 3]; 3];
    for img in images {
        for px in img.rgb() {
            let d = [0, 1, 2].map(|c| px[c] / 255.0 - mean[c]);
            for r in 0..3 {
                for s in r..3 {
                    cov[r][s] += d[r] * d[s];
                }
            }
        }
    }
    for (r, s) in [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)] {
        cov[r][s] /= (n - 1) as f64;
        cov[s][r] = cov[r][s];
    }
    Ok((mean, cov))
}

pub fn fit_pca_basis(images: &[Image]) -> Result<PcaBasis> {
    let (mean, cov) = rgb_covariance(images)?;
    let m = Matrix3::from_fn(|r, c| cov[r][c]);
    let eig = SymmetricEigen::new(m);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues = order.map(|i| eig.eigenvalues[i].max(0.0));
    let eigenvectors = order.map(|i| {
        let v = eig.eigenvectors.column(i);
        [v[0], v[1], v[2]]
    });
    Ok(PcaBasis {
        eigenvalues,
        eigenvectors,
        channel_means: mean,
    })
}

/// Adds one lighting shift, drawn once per image, to every pixel.
///
/// `αᵢ ~ Normal(0, sigma²)`; the image is clamped to `[0, 255]` afterwards.
pub fn pca_noise<R: Rng + ?Sized>(image: &Image, basis: &PcaBasis, rng: &mut R, sigma: f64) -> Image {
    let alphas = [(); 3].map(|_| {
        let z: f64 = rng.sample(StandardNormal);
        z * sigma
    });
    let shift = basis.shift(alphas);
    let mut out = image.clone();
    for px in out.rgb_mut() {
        for c in 0..3 {
            px[c] = (px[c] + shift[c]).clamp(0.0, 255.0);
        }
    }
    out
}
