use super::{Grid, ImageBatch};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Patchified images: `[n × patches × d]` with `d = ph·pw·c`.
///
/// Patches are ordered row-major over the grid (top-left first); inside a
/// patch pixels are row-major with channels interleaved last.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSequence {
    pub values: Tensor,
    pub grid: Grid,
    pub image_shape: (usize, usize, usize),
}

impl PatchSequence {
    pub fn n(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn patches(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn patch_dim(&self) -> usize {
        self.values.shape()[2]
    }

    /// `[n·patches × d]`, the layout consumed by the model.
    pub fn rows(&self) -> Tensor {
        self.values
            .detached()
            .reshape(&[self.n() * self.patches(), self.patch_dim()])
            .expect("same length")
    }
}

fn patch_extents(h: usize, w: usize, grid: Grid) -> Result<(usize, usize)> {
    if h % grid.rows != 0 || w % grid.cols != 0 {
        return Err(Error::Config(format!(
            "{h}x{w} image does not split into a {grid} grid"
        )));
    }
    Ok((h / grid.rows, w / grid.cols))
}

fn for_each_pixel(
    h: usize,
    w: usize,
    c: usize,
    grid: Grid,
    mut f: impl FnMut(usize, usize),
) -> Result<()> {
    let (ph, pw) = patch_extents(h, w, grid)?;
    let d = ph * pw * c;
    for gr in 0..grid.rows {
        for gc in 0..grid.cols {
            let patch = gr * grid.cols + gc;
            for r in 0..ph {
                for col in 0..pw {
                    let src = ((gr * ph + r) * w + gc * pw + col) * c;
                    let dst = patch * d + (r * pw + col) * c;
                    for ch in 0..c {
                        f(src + ch, dst + ch);
                    }
                }
            }
        }
    }
    Ok(())
}

pub fn patchify(batch: &ImageBatch, grid: Grid) -> Result<PatchSequence> {
    let (h, w, c) = (batch.height(), batch.width(), batch.channels());
    let (ph, pw) = patch_extents(h, w, grid)?;
    let d = ph * pw * c;
    let len = batch.image_len();
    let src = batch.pixels().data();
    let mut out = vec![0.0; src.len()];
    for i in 0..batch.n() {
        let (s, o) = (&src[i * len..(i + 1) * len], &mut out[i * len..(i + 1) * len]);
        for_each_pixel(h, w, c, grid, |from, to| o[to] = s[from])?;
    }
    Ok(PatchSequence {
        values: Tensor::new(&[batch.n(), grid.patches(), d], out)?,
        grid,
        image_shape: (h, w, c),
    })
}

/// Inverse of [`patchify`]. Values are not range-checked, so model outputs
/// can be reassembled before clamping.
pub fn unpatchify(seq: &PatchSequence, labels: Option<Vec<u8>>) -> Result<ImageBatch> {
    let (h, w, c) = seq.image_shape;
    let (ph, pw) = patch_extents(h, w, seq.grid)?;
    if seq.patches() != seq.grid.patches() || seq.patch_dim() != ph * pw * c {
        return Err(Error::dim(
            "unpatchify",
            seq.values.shape(),
            &[seq.grid.patches(), ph * pw * c],
        ));
    }
    let len = h * w * c;
    let src = seq.values.data();
    let mut out = vec![0.0; src.len()];
    for i in 0..seq.n() {
        let (s, o) = (&src[i * len..(i + 1) * len], &mut out[i * len..(i + 1) * len]);
        for_each_pixel(h, w, c, seq.grid, |img, patch| o[img] = s[patch])?;
    }
    ImageBatch::from_flat_unchecked(out, seq.n(), h, w, c, labels)
}
