//! Image batches, patch sequences, masking and dataset loaders.

mod idx;
mod mask;
mod patch;
pub mod pnm;
mod synthetic;

use std::fmt;
use std::str::FromStr;

pub use idx::{load_mnist_idx, read_idx_images, read_idx_labels, write_idx_images, write_idx_labels};
pub use mask::{apply_mask, mask_images, MaskSpec};
pub use patch::{patchify, unpatchify, PatchSequence};
pub use pnm::{load_image_dir, to_byte, RawImage};
pub use synthetic::{gaussian_blobs, low_rank, BlobParams};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `rows × cols` arrangement of non-overlapping patches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
}

impl Grid {
    pub fn new(rows: usize, cols: usize) -> Self {
        Grid { rows, cols }
    }

    pub fn patches(self) -> usize {
        self.rows * self.cols
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

impl FromStr for Grid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (r, c) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::Config(format!("grid {s:?} is not of the form RxC")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| Error::Config(format!("bad grid extent {v:?} in {s:?}")))
        };
        Ok(Grid::new(parse(r)?, parse(c)?))
    }
}

/// `n` images of `h × w × c` pixels in [0, 1], with optional class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBatch {
    pixels: Tensor,
    labels: Option<Vec<u8>>,
}

impl ImageBatch {
    pub fn new(pixels: Tensor, labels: Option<Vec<u8>>) -> Result<Self> {
        if pixels.rank() != 4 {
            return Err(Error::Shape(format!(
                "image batch must be [n, h, w, c], got {:?}",
                pixels.shape()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != pixels.shape()[0] {
                return Err(Error::Shape(format!(
                    "{} labels for {} images",
                    l.len(),
                    pixels.shape()[0]
                )));
            }
        }
        if let Some(v) = pixels.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Contract(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(ImageBatch { pixels, labels })
    }

    /// Wraps `[n × h·w·c]` rows without the [0, 1] check; used for model
    /// outputs, which are clamped only on export.
    pub fn from_flat_unchecked(
        flat: Vec<f64>,
        n: usize,
        h: usize,
        w: usize,
        c: usize,
        labels: Option<Vec<u8>>,
    ) -> Result<Self> {
        Ok(ImageBatch {
            pixels: Tensor::new(&[n, h, w, c], flat)?,
            labels,
        })
    }

    pub fn n(&self) -> usize {
        self.pixels.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[2]
    }

    pub fn channels(&self) -> usize {
        self.pixels.shape()[3]
    }

    /// Values per image.
    pub fn image_len(&self) -> usize {
        self.height() * self.width() * self.channels()
    }

    pub fn pixels(&self) -> &Tensor {
        &self.pixels
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let d = self.image_len();
        &self.pixels.data()[i * d..(i + 1) * d]
    }

    /// `[n × h·w·c]` view, one row per image.
    pub fn flat(&self) -> Tensor {
        self.pixels
            .detached()
            .reshape(&[self.n(), self.image_len()])
            .expect("same length")
    }

    pub fn select(&self, indices: &[usize]) -> ImageBatch {
        let d = self.image_len();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        ImageBatch {
            pixels: Tensor::new(
                &[indices.len(), self.height(), self.width(), self.channels()],
                data,
            )
            .expect("selection is non-empty"),
            labels,
        }
    }

    /// First `count` images (or all, if fewer).
    pub fn take(&self, count: usize) -> ImageBatch {
        let idx: Vec<usize> = (0..count.min(self.n())).collect();
        self.select(&idx)
    }

    /// Same images with pixel values clamped to [0, 1].
    pub fn clamped(&self) -> ImageBatch {
        ImageBatch {
            pixels: self.pixels.map(|v| v.clamp(0.0, 1.0)),
            labels: self.labels.clone(),
        }
    }

    /// The per-pixel mean image, as a one-image batch.
    pub fn mean_image(&self) -> ImageBatch {
        let d = self.image_len();
        let mut mean = vec![0.0; d];
        for i in 0..self.n() {
            mean.iter_mut().zip(self.image(i)).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= self.n() as f64);
        ImageBatch {
            pixels: Tensor::new(&[1, self.height(), self.width(), self.channels()], mean)
                .expect("non-empty"),
            labels: None,
        }
    }
}

/// Per-image squared error `‖a_i − b_i‖²`.
pub fn per_image_sq_error(a: &ImageBatch, b: &ImageBatch) -> Result<Vec<f64>> {
    if a.pixels.shape() != b.pixels.shape() {
        return Err(Error::dim("per_image_sq_error", a.pixels.shape(), b.pixels.shape()));
    }
    Ok((0..a.n())
        .map(|i| {
            a.image(i)
                .iter()
                .zip(b.image(i))
                .map(|(x, y)| (x - y) * (x - y))
                .sum()
        })
        .collect())
}

/// Mean over images of the summed squared pixel error.
pub fn mse(a: &ImageBatch, b: &ImageBatch) -> Result<f64> {
    let e = per_image_sq_error(a, b)?;
    Ok(e.iter().sum::<f64>() / e.len() as f64)
}
