//! Single test: the precision switch is process-wide.

use transdr::data::{low_rank, Grid};
use transdr::model::{ModelConfig, TransformerDR};
use transdr::tensor::set_precision;
use transdr::training::{TrainConfig, Trainer};
use transdr::{Error, Precision};

#[test]
fn f32_runs_round_every_value_and_refuse_mixed_settings() {
    let data = low_rank(12, 8, 8, 2, 1).unwrap();
    let build = || {
        let cfg = ModelConfig::for_images(8, 8, Grid::new(2, 2), vec![16, 8, 4], 3).unwrap();
        TransformerDR::build_symmetric(cfg, 3).unwrap()
    };
    let cfg = |p| TrainConfig { epochs: 2, batch_size: 4, precision: p, ..Default::default() };

    let mut m64 = build();
    let mut t = Trainer::new(cfg(Precision::F64), m64.params()).unwrap();
    t.train(&mut m64, &data).unwrap();
    let l64 = t.curve.losses.clone();

    // Config says f32 but the process is still in f64.
    let mut m = build();
    let mut t = Trainer::new(cfg(Precision::F32), m.params()).unwrap();
    assert!(matches!(t.train(&mut m, &data), Err(Error::Config(_))));

    set_precision(Precision::F32);
    let mut m32 = build();
    let mut t = Trainer::new(cfg(Precision::F32), m32.params()).unwrap();
    t.train(&mut m32, &data).unwrap();
    set_precision(Precision::F64);

    let l32 = &t.curve.losses;
    assert!(l32.iter().all(|l| l.is_finite()));
    assert_ne!(&l64, l32);
    for (a, b) in l64.iter().zip(l32) {
        assert!((a - b).abs() < 1e-3 * a.abs(), "{a} vs {b}");
    }
    for (_, w) in m32.params().iter() {
        assert!(w.data().iter().all(|&v| v == v as f32 as f64));
    }
}
