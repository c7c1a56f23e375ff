use super::{canonical_sign, column_means, to_matrix};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Top-`k` principal directions of mean-centred data.
#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    pub mean: Tensor,
    /// `[d × k]`, orthonormal columns.
    pub components: Tensor,
    /// Sample variance along each component, descending.
    pub variances: Vec<f64>,
}

/// Fits PCA from the SVD of the centred `[n × d]` data matrix. Each
/// component is signed so that its largest-magnitude entry is positive.
pub fn pca_fit(data: &Tensor, k: usize) -> Result<PcaModel> {
    if data.rank() != 2 {
        return Err(Error::Shape(format!("expected [n × d], got {:?}", data.shape())));
    }
    let (n, d) = (data.rows(), data.cols());
    if n < 2 {
        return Err(Error::Config(format!("PCA needs at least 2 samples, got {n}")));
    }
    if k == 0 || k > n.min(d) {
        return Err(Error::Config(format!("k = {k} outside 1..={}", n.min(d))));
    }
    let mean = column_means(data);
    let mut centred = to_matrix(data)?;
    for mut row in centred.row_iter_mut() {
        row.iter_mut().zip(&mean).for_each(|(v, m)| *v -= m);
    }
    let svd = centred.svd(false, true);
    let vt = svd
        .v_t
        .ok_or_else(|| Error::Numeric("SVD did not return right singular vectors".into()))?;
    let s = &svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));

    let mut components = vec![0.0; d * k];
    let mut variances = Vec::with_capacity(k);
    for (j, &idx) in order.iter().take(k).enumerate() {
        let mut v: Vec<f64> = vt.row(idx).iter().copied().collect();
        canonical_sign(&mut v);
        for (i, x) in v.into_iter().enumerate() {
            components[i * k + j] = x;
        }
        variances.push(s[idx] * s[idx] / (n - 1) as f64);
    }
    Ok(PcaModel {
        mean: Tensor::new(&[d], mean)?,
        components: Tensor::new(&[d, k], components)?,
        variances,
    })
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn k(&self) -> usize {
        self.components.cols()
    }

    fn check(&self, x: &Tensor, width: usize) -> Result<()> {
        if x.rank() != 2 || x.cols() != width {
            return Err(Error::dim("pca", x.shape(), &[x.rows(), width]));
        }
        Ok(())
    }

    /// `(x − mean)·components`
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x, self.dim())?;
        let m = self.mean.data();
        let centred = Tensor::new(
            x.shape(),
            x.data()
                .chunks_exact(self.dim())
                .flat_map(|r| r.iter().zip(m).map(|(v, m)| v - m))
                .collect(),
        )?;
        centred.matmul(&self.components)
    }

    /// `code·componentsᵀ + mean`
    pub fn decode(&self, code: &Tensor) -> Result<Tensor> {
        self.check(code, self.k())?;
        let mut out = code.matmul(&self.components.transpose()?)?;
        let d = self.dim();
        for row in out.data_mut().chunks_exact_mut(d) {
            row.iter_mut().zip(self.mean.data()).for_each(|(v, m)| *v += m);
        }
        Ok(out)
    }

    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        self.decode(&self.encode(x)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collinear_points() {
        let data = Tensor::from_rows(&[
            vec![0.0, 0.0],
            vec![1.0, 1.0],
            vec![2.0, 2.0],
            vec![-3.0, -3.0],
        ])
        .unwrap();
        let m = pca_fit(&data, 1).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((m.components.data()[0] - h).abs() < 1e-12);
        assert!((m.components.data()[1] - h).abs() < 1e-12);
    }

    #[test]
    fn full_rank_round_trip() {
        let data = Tensor::from_rows(&[
            vec![0.3, 1.0, -2.0],
            vec![1.5, 0.2, 0.7],
            vec![-0.4, 2.2, 1.1],
            vec![0.9, -1.3, 0.4],
            vec![2.0, 0.0, -0.5],
        ])
        .unwrap();
        let m = pca_fit(&data, 3).unwrap();
        assert!(m.reconstruct(&data).unwrap().max_abs_diff(&data) < 1e-8);
        let mean = Tensor::new(&[1, 3], m.mean.data().to_vec()).unwrap();
        assert!(m.reconstruct(&mean).unwrap().max_abs_diff(&mean) < 1e-12);
        let ctc = m.components.transpose().unwrap().matmul(&m.components).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((ctc.at(&[i, j]) - want).abs() < 1e-8);
            }
        }
        assert!(m.variances.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn rejects_bad_k() {
        let data = Tensor::zeros(&[3, 2]);
        assert!(pca_fit(&data, 3).is_err());
        assert!(pca_fit(&data, 0).is_err());
        assert!(pca_fit(&Tensor::zeros(&[1, 2]), 1).is_err());
    }
}
