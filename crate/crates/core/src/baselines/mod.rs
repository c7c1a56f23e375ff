//! Comparison methods: closed-form PCA and LDA, and a fully-connected
//! autoencoder trained with the same objective as the Transformer model.

mod ae;
mod lda;
mod pca;

pub use ae::AeModel;
pub use lda::{lda_fit, LdaModel, LDA_RIDGE};
pub use pca::{pca_fit, PcaModel};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub(crate) fn to_matrix(t: &Tensor) -> Result<DMatrix<f64>> {
    if t.rank() != 2 {
        return Err(Error::Shape(format!("expected a matrix, got {:?}", t.shape())));
    }
    Ok(DMatrix::from_row_slice(t.shape()[0], t.shape()[1], t.data()))
}

pub(crate) fn from_matrix(m: &DMatrix<f64>) -> Tensor {
    let (r, c) = m.shape();
    let data = (0..r).flat_map(|i| (0..c).map(move |j| m[(i, j)])).collect();
    Tensor::new(&[r, c], data).expect("non-empty matrix")
}

/// Flips `v` so its largest-magnitude entry (first on ties) is positive.
pub(crate) fn canonical_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

pub(crate) fn column_means(data: &Tensor) -> Vec<f64> {
    let (n, d) = (data.rows(), data.cols());
    let mut mean = vec![0.0; d];
    for r in 0..n {
        mean.iter_mut().zip(data.row(r)).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    mean
}
