use rand::seq::index::sample;

use super::patch::{patchify, unpatchify, PatchSequence};
use super::{Grid, ImageBatch};
use crate::error::{Error, Result};
use crate::nn::seeded_rng;

/// Random patch masking: each image gets `round(ratio·P)` patches (ties to
/// even) chosen uniformly without replacement and overwritten with `fill`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskSpec {
    pub ratio: f64,
    pub seed: u64,
    pub fill: f64,
}

impl MaskSpec {
    pub fn new(ratio: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&ratio) {
            return Err(Error::Config(format!("mask ratio must lie in [0, 1), got {ratio}")));
        }
        Ok(MaskSpec {
            ratio,
            seed,
            fill: 0.0,
        })
    }

    pub fn masked_count(&self, patches: usize) -> usize {
        (self.ratio * patches as f64).round_ties_even() as usize
    }

    /// One boolean mask per image; `true` marks a masked patch.
    pub fn masks(&self, images: usize, patches: usize) -> Vec<Vec<bool>> {
        let k = self.masked_count(patches);
        let mut rng = seeded_rng(self.seed);
        (0..images)
            .map(|_| {
                let mut m = vec![false; patches];
                for i in sample(&mut rng, patches, k) {
                    m[i] = true;
                }
                m
            })
            .collect()
    }
}

pub fn apply_mask(seq: &PatchSequence, spec: &MaskSpec) -> Result<(PatchSequence, Vec<Vec<bool>>)> {
    if !(0.0..1.0).contains(&spec.ratio) {
        return Err(Error::Config(format!("mask ratio must lie in [0, 1), got {}", spec.ratio)));
    }
    let (p, d) = (seq.patches(), seq.patch_dim());
    let masks = spec.masks(seq.n(), p);
    let mut out = seq.clone();
    let data = out.values.data_mut();
    for (i, m) in masks.iter().enumerate() {
        for (j, _) in m.iter().enumerate().filter(|(_, &on)| on) {
            let start = (i * p + j) * d;
            data[start..start + d].fill(spec.fill);
        }
    }
    Ok((out, masks))
}

/// Masks patches of a `grid` layout and reassembles the images.
pub fn mask_images(batch: &ImageBatch, grid: Grid, spec: &MaskSpec) -> Result<ImageBatch> {
    let seq = patchify(batch, grid)?;
    let (masked, _) = apply_mask(&seq, spec)?;
    unpatchify(&masked, batch.labels().map(<[u8]>::to_vec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn seq(n: usize, p: usize, d: usize) -> PatchSequence {
        let len = n * p * d;
        PatchSequence {
            values: Tensor::new(&[n, p, d], (0..len).map(|i| 1.0 + i as f64).collect()).unwrap(),
            grid: Grid::new(1, p),
            image_shape: (1, p * d, 1),
        }
    }

    #[test]
    fn zero_ratio_is_identity() {
        let s = seq(3, 16, 4);
        let (m, _) = apply_mask(&s, &MaskSpec::new(0.0, 1).unwrap()).unwrap();
        assert_eq!(m, s);
    }

    #[test]
    fn three_quarters_of_sixteen() {
        let s = seq(5, 16, 3);
        let spec = MaskSpec::new(0.75, 9).unwrap();
        let (m, masks) = apply_mask(&s, &spec).unwrap();
        for i in 0..5 {
            assert_eq!(masks[i].iter().filter(|&&b| b).count(), 12);
            for j in 0..16 {
                let off = (i * 16 + j) * 3;
                let got = &m.values.data()[off..off + 3];
                if masks[i][j] {
                    assert!(got.iter().all(|&v| v == 0.0));
                } else {
                    assert_eq!(got, &s.values.data()[off..off + 3]);
                }
            }
        }
        let (again, _) = apply_mask(&s, &spec).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn ratio_validation_and_rounding() {
        assert!(MaskSpec::new(1.0, 0).is_err());
        assert!(MaskSpec::new(-0.1, 0).is_err());
        // 0.5·5 = 2.5 rounds to 2, 0.5·7 = 3.5 rounds to 4
        let spec = MaskSpec::new(0.5, 0).unwrap();
        assert_eq!(spec.masked_count(5), 2);
        assert_eq!(spec.masked_count(7), 4);
    }
}
