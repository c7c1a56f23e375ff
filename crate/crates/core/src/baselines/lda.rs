use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{canonical_sign, column_means, from_matrix, to_matrix};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Ridge added to the within-class scatter before inversion.
pub const LDA_RIDGE: f64 = 1e-6;

/// Fisher discriminant projection.
#[derive(Clone, Debug, PartialEq)]
pub struct LdaModel {
    pub mean: Tensor,
    /// `[d × k]`, unit-length columns ordered by discriminant ratio.
    pub projection: Tensor,
    pub eigenvalues: Vec<f64>,
    /// Sorted distinct class ids and their means.
    pub classes: Vec<usize>,
    pub class_means: Tensor,
}

/// Top-`k` eigenvectors of `(S_w + εI)⁻¹ S_b`.
///
/// Solved as a symmetric problem: with `S_w + εI = LLᵀ`, the eigenvectors
/// `u` of `L⁻¹ S_b L⁻ᵀ` map to discriminant directions `L⁻ᵀ u`.
pub fn lda_fit(data: &Tensor, labels: &[usize], k: usize) -> Result<LdaModel> {
    if data.rank() != 2 || data.rows() != labels.len() {
        return Err(Error::dim("lda_fit", data.shape(), &[labels.len()]));
    }
    let d = data.cols();
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::Config("LDA needs at least two classes".into()));
    }
    if k == 0 || k > classes.len() - 1 {
        return Err(Error::Config(format!(
            "k = {k} outside 1..={} for {} classes",
            classes.len() - 1,
            classes.len()
        )));
    }
    let x = to_matrix(data)?;
    let mean = DVector::from_vec(column_means(data));
    let mut means = DMatrix::zeros(classes.len(), d);
    let mut counts = vec![0usize; classes.len()];
    let class_of: Vec<usize> = labels
        .iter()
        .map(|l| classes.binary_search(l).unwrap())
        .collect();
    for (r, &c) in class_of.iter().enumerate() {
        let mut row = means.row_mut(c);
        row += x.row(r);
        counts[c] += 1;
    }
    for (c, &cnt) in counts.iter().enumerate() {
        let mut row = means.row_mut(c);
        row /= cnt as f64;
    }

    let mut sw = DMatrix::<f64>::identity(d, d) * LDA_RIDGE;
    let mut centred = x.clone();
    for (r, &c) in class_of.iter().enumerate() {
        let mut row = centred.row_mut(r);
        row -= means.row(c);
    }
    sw += centred.transpose() * &centred;

    let mut sb = DMatrix::<f64>::zeros(d, d);
    for (c, &cnt) in counts.iter().enumerate() {
        let diff = means.row(c).transpose() - &mean;
        sb += (&diff * diff.transpose()) * cnt as f64;
    }

    let chol = sw
        .cholesky()
        .ok_or_else(|| Error::Numeric("within-class scatter is not positive definite".into()))?;
    let l = chol.l();
    let a = l
        .solve_lower_triangular(&sb)
        .ok_or_else(|| Error::Numeric("triangular solve failed".into()))?;
    let mut m = l
        .solve_lower_triangular(&a.transpose())
        .ok_or_else(|| Error::Numeric("triangular solve failed".into()))?;
    m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let lt = l.transpose();
    let mut projection = vec![0.0; d * k];
    let mut eigenvalues = Vec::with_capacity(k);
    for (j, &idx) in order.iter().take(k).enumerate() {
        let u = eig.eigenvectors.column(idx).into_owned();
        let w = lt
            .solve_upper_triangular(&u)
            .ok_or_else(|| Error::Numeric("triangular solve failed".into()))?;
        let norm = w.norm();
        let mut w: Vec<f64> = w.iter().map(|v| v / norm).collect();
        canonical_sign(&mut w);
        for (i, v) in w.into_iter().enumerate() {
            projection[i * k + j] = v;
        }
        eigenvalues.push(eig.eigenvalues[idx]);
    }
    Ok(LdaModel {
        mean: Tensor::new(&[d], mean.iter().copied().collect())?,
        projection: Tensor::new(&[d, k], projection)?,
        eigenvalues,
        classes,
        class_means: from_matrix(&means),
    })
}

impl LdaModel {
    pub fn k(&self) -> usize {
        self.projection.cols()
    }

    /// `(x − mean)·projection`
    pub fn transform(&self, x: &Tensor) -> Result<Tensor> {
        let d = self.mean.len();
        if x.rank() != 2 || x.cols() != d {
            return Err(Error::dim("lda_transform", x.shape(), &[x.rows(), d]));
        }
        let centred = Tensor::new(
            x.shape(),
            x.data()
                .chunks_exact(d)
                .flat_map(|r| r.iter().zip(self.mean.data()).map(|(v, m)| v - m))
                .collect(),
        )?;
        centred.matmul(&self.projection)
    }
}
