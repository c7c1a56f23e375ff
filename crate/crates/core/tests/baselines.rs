use proptest::prelude::*;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use transdr::baselines::{lda_fit, pca_fit, AeModel};
use transdr::data::{gaussian_blobs, low_rank, BlobParams};
use transdr::Tensor;

mod common;
use common::{covariance, jacobi_eigen};

#[test]
fn pca_matches_covariance_eigendecomposition() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..20 {
        let rows: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..6).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let data = Tensor::from_rows(&rows).unwrap();
        let model = pca_fit(&data, 6).unwrap();
        let (values, vectors) = jacobi_eigen(&covariance(&rows));
        for c in 0..6 {
            assert!(
                (model.variances[c] - values[c]).abs() < 1e-8,
                "trial {trial} variance {c}: {} vs {}",
                model.variances[c],
                values[c]
            );
            let ours: Vec<f64> = (0..6).map(|r| model.components.at(&[r, c])).collect();
            let dot: f64 = ours.iter().zip(&vectors[c]).map(|(a, b)| a * b).sum();
            let sign = dot.signum();
            let worst = ours
                .iter()
                .zip(&vectors[c])
                .map(|(a, b)| (a - sign * b).abs())
                .fold(0.0, f64::max);
            assert!(worst < 1e-8, "trial {trial} component {c}: {worst}");
        }
    }
}

#[test]
fn encoded_variances_match_model() {
    let data = gaussian_blobs(BlobParams { classes: 4, per_class: 30, ..Default::default() }, 3)
        .unwrap()
        .flat();
    let model = pca_fit(&data, 5).unwrap();
    let codes = model.encode(&data).unwrap();
    let n = codes.rows();
    for c in 0..5 {
        let col: Vec<f64> = (0..n).map(|r| codes.at(&[r, c])).collect();
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 1e-10);
        assert!((var - model.variances[c]).abs() <= 1e-6 * model.variances[c]);
    }
}

#[test]
fn rank_one_data_is_recovered_exactly() {
    let data = low_rank(20, 5, 5, 1, 9).unwrap().flat();
    let model = pca_fit(&data, 1).unwrap();
    let recon = model.reconstruct(&data).unwrap();
    let mse = recon.data().iter().zip(data.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 20.0;
    assert!(mse < 1e-10, "{mse}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn reconstruction_error_never_grows_with_k(seed in any::<u64>(), n in 6usize..15, d in 2usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = Tensor::new(&[n, d], (0..n * d).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let mut last = f64::INFINITY;
        for k in 1..=d.min(n) {
            let recon = pca_fit(&data, k).unwrap().reconstruct(&data).unwrap();
            let err: f64 = recon.data().iter().zip(data.data()).map(|(a, b)| (a - b).powi(2)).sum();
            prop_assert!(err <= last + 1e-9, "k={k}: {err} > {last}");
            last = err;
        }
    }
}

#[test]
fn lda_rank_bound_and_ten_class_projection() {
    let blobs = gaussian_blobs(BlobParams { classes: 3, per_class: 20, ..Default::default() }, 1).unwrap();
    let labels: Vec<usize> = blobs.labels().unwrap().iter().map(|&l| l as usize).collect();
    assert_eq!(lda_fit(&blobs.flat(), &labels, 2).unwrap().k(), 2);
    assert!(lda_fit(&blobs.flat(), &labels, 3).is_err());

    let ten = gaussian_blobs(BlobParams { classes: 10, per_class: 12, ..Default::default() }, 2).unwrap();
    let labels: Vec<usize> = ten.labels().unwrap().iter().map(|&l| l as usize).collect();
    let model = lda_fit(&ten.flat(), &labels, 2).unwrap();
    assert_eq!(model.transform(&ten.flat()).unwrap().shape(), &[120, 2]);
}

#[test]
fn lda_separates_blobs_better_than_chance() {
    let blobs = gaussian_blobs(BlobParams { classes: 3, per_class: 40, spread: 0.05, ..Default::default() }, 5)
        .unwrap();
    let labels: Vec<usize> = blobs.labels().unwrap().iter().map(|&l| l as usize).collect();
    let z = lda_fit(&blobs.flat(), &labels, 2).unwrap().transform(&blobs.flat()).unwrap();
    // Nearest projected class mean classifies the training points.
    let mut means = vec![[0.0f64; 2]; 3];
    for (r, &l) in labels.iter().enumerate() {
        means[l][0] += z.at(&[r, 0]) / 40.0;
        means[l][1] += z.at(&[r, 1]) / 40.0;
    }
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(r, &l)| {
            let d = |m: &[f64; 2]| (z.at(&[r, 0]) - m[0]).powi(2) + (z.at(&[r, 1]) - m[1]).powi(2);
            (0..3).min_by(|&a, &b| d(&means[a]).total_cmp(&d(&means[b]))).unwrap() == l
        })
        .count();
    assert!(correct >= 114, "{correct}/120");
}

#[test]
fn autoencoder_schedules() {
    assert_eq!(AeModel::new(&[784, 512, 256, 128, 64, 32], 0).unwrap().code_dim(), 32);
    assert_eq!(AeModel::new(&[784, 512, 256, 128, 64, 2], 0).unwrap().code_dim(), 2);
    assert!(AeModel::new(&[10, 10], 0).is_err());
    assert!(AeModel::new(&[10], 0).is_err());
    let a = AeModel::new(&[12, 6, 3], 4).unwrap();
    let b = AeModel::new(&[12, 6, 3], 4).unwrap();
    for ((na, ta), (nb, tb)) in a.params().iter().zip(b.params().iter()) {
        assert_eq!(na, nb);
        assert_eq!(ta.data(), tb.data());
    }
}
