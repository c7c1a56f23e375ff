//! Small generated datasets with known structure.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::ImageBatch;
use crate::error::{Error, Result};
use crate::nn::seeded_rng;
use crate::tensor::Tensor;

/// `n` single-channel `h × w` images, each a non-negative combination of
/// `rank` fixed outer products `u_r v_rᵀ`. The flattened data matrix has rank
/// at most `rank`, and all pixels stay in [0, 1].
pub fn low_rank(n: usize, h: usize, w: usize, rank: usize, seed: u64) -> Result<ImageBatch> {
    if n == 0 || h == 0 || w == 0 || rank == 0 {
        return Err(Error::Config("low_rank extents must be positive".into()));
    }
    let mut rng = seeded_rng(seed);
    let factors: Vec<(Vec<f64>, Vec<f64>)> = (0..rank)
        .map(|_| {
            let u = (0..h).map(|_| rng.random::<f64>()).collect();
            let v = (0..w).map(|_| rng.random::<f64>()).collect();
            (u, v)
        })
        .collect();
    let mut data = Vec::with_capacity(n * h * w);
    for _ in 0..n {
        let coef: Vec<f64> = (0..rank).map(|_| rng.random::<f64>() / rank as f64).collect();
        for r in 0..h {
            for c in 0..w {
                let v: f64 = factors
                    .iter()
                    .zip(&coef)
                    .map(|((u, v), a)| a * u[r] * v[c])
                    .sum();
                data.push(v);
            }
        }
    }
    ImageBatch::new(Tensor::new(&[n, h, w, 1], data)?, None)
}

#[derive(Clone, Copy, Debug)]
pub struct BlobParams {
    pub classes: usize,
    pub per_class: usize,
    pub height: usize,
    pub width: usize,
    /// Standard deviation of every pixel around its class mean.
    pub spread: f64,
}

impl Default for BlobParams {
    fn default() -> Self {
        BlobParams {
            classes: 3,
            per_class: 50,
            height: 4,
            width: 4,
            spread: 0.03,
        }
    }
}

/// Labelled isotropic Gaussian clusters. Class means are drawn uniformly in
/// [0.2, 0.8] per pixel; samples are clamped to [0, 1] and interleaved by
/// class.
pub fn gaussian_blobs(params: BlobParams, seed: u64) -> Result<ImageBatch> {
    let BlobParams {
        classes,
        per_class,
        height,
        width,
        spread,
    } = params;
    if classes == 0 || per_class == 0 || height * width == 0 || classes > 256 {
        return Err(Error::Config("invalid blob parameters".into()));
    }
    let d = height * width;
    let mut rng = seeded_rng(seed);
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..d).map(|_| rng.random_range(0.2..0.8)).collect())
        .collect();
    let noise = Normal::new(0.0, spread).map_err(|e| Error::Config(e.to_string()))?;
    let mut data = Vec::with_capacity(classes * per_class * d);
    let mut labels = Vec::with_capacity(classes * per_class);
    for _ in 0..per_class {
        for (c, mean) in means.iter().enumerate() {
            data.extend(mean.iter().map(|m| (m + noise.sample(&mut rng)).clamp(0.0, 1.0)));
            labels.push(c as u8);
        }
    }
    ImageBatch::new(
        Tensor::new(&[classes * per_class, height, width, 1], data)?,
        Some(labels),
    )
}
