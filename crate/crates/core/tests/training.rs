use transdr::baselines::AeModel;
use transdr::data::{gaussian_blobs, low_rank, BlobParams, Grid, ImageBatch};
use transdr::model::{ModelConfig, TransformerDR};
use transdr::training::{
    AdamConfig, Checkpoint, Masking, Model, Objective, TrainConfig, Trainer,
};
use transdr::Error;

fn data() -> ImageBatch {
    low_rank(24, 8, 8, 3, 17).unwrap()
}

fn model(seed: u64) -> TransformerDR {
    let cfg = ModelConfig::for_images(8, 8, Grid::new(2, 2), vec![16, 8, 4], seed).unwrap();
    TransformerDR::build_symmetric(cfg, seed).unwrap()
}

fn config(epochs: usize) -> TrainConfig {
    TrainConfig {
        adam: AdamConfig { learning_rate: 3e-3, ..Default::default() },
        batch_size: 5,
        epochs,
        seed: 4,
        ..Default::default()
    }
}

fn bits(m: &TransformerDR) -> Vec<u64> {
    m.params().iter().flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits())).collect()
}

#[test]
fn training_is_deterministic() {
    let run = || {
        let mut m = model(1);
        let mut t = Trainer::new(config(4), m.params()).unwrap();
        t.train(&mut m, &data()).unwrap();
        (bits(&m), t.curve.losses.clone(), Model::TransformerDr(m).to_checkpoint(Some(&t)).to_bytes())
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
    assert_eq!(a.1.len(), 4);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let d = data();
    let mut full = model(2);
    let mut t = Trainer::new(config(5), full.params()).unwrap();
    t.train(&mut full, &d).unwrap();

    let mut part = model(2);
    let mut t3 = Trainer::new(config(5), part.params()).unwrap();
    t3.train_epochs(&mut part, &d, 3, |_, _, _| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.ckpt");
    Model::TransformerDr(part).save(Some(&t3), &path).unwrap();

    let (loaded, trainer) = Model::load(&path).unwrap();
    let mut trainer = trainer.expect("trainer state saved");
    assert_eq!(trainer.epochs_done, 3);
    let Model::TransformerDr(mut resumed) = loaded else { panic!("wrong kind") };
    trainer.train(&mut resumed, &d).unwrap();

    assert_eq!(bits(&full), bits(&resumed));
    assert_eq!(t.curve.losses, trainer.curve.losses);
    assert_eq!(t.adam.steps(), trainer.adam.steps());
}

#[test]
fn zero_epochs_leaves_parameters_alone() {
    let mut m = model(3);
    let before = bits(&m);
    let mut t = Trainer::new(config(0), m.params()).unwrap();
    let curve = t.train(&mut m, &data()).unwrap();
    assert!(curve.is_empty());
    assert_eq!(curve.to_csv(false), "epoch,loss,seconds\n");
    assert_eq!(before, bits(&m));
}

#[test]
fn loss_drops_on_low_rank_images() {
    let mut m = model(4);
    let mut t = Trainer::new(config(30), m.params()).unwrap();
    let losses = t.train(&mut m, &data()).unwrap().losses.clone();
    assert!(losses.iter().all(|l| l.is_finite()));
    assert!(losses[29] < 0.5 * losses[0], "{losses:?}");

    let mut ae = AeModel::for_images((8, 8, 1), &[64, 16, 4], 4).unwrap();
    let mut t = Trainer::new(config(30), ae.params()).unwrap();
    let losses = t.train(&mut ae, &data()).unwrap().losses.clone();
    assert!(losses[29] < 0.5 * losses[0], "{losses:?}");
}

#[test]
fn masked_and_joint_objectives_train() {
    let mut cfg = config(3);
    cfg.masking = Some(Masking { ratio: 0.75, grid: Grid::new(4, 4) });
    let mut m = model(5);
    let mut t = Trainer::new(cfg, m.params()).unwrap();
    assert!(t.train(&mut m, &data()).unwrap().losses.iter().all(|l| l.is_finite()));

    let blobs = gaussian_blobs(
        BlobParams { classes: 3, per_class: 10, height: 8, width: 8, spread: 0.05 },
        1,
    )
    .unwrap();
    let mut cfg = config(3);
    cfg.objective = Objective::Joint { lambda: 1.0, margin: 0.35, scale: 16.0 };
    let mut m = model(6).with_class_head(3, 0.35, 16.0, 6);
    let mut t = Trainer::new(cfg.clone(), m.params()).unwrap();
    t.train(&mut m, &blobs).unwrap();
    assert_eq!(m.classify(&blobs).unwrap().len(), 30);

    // A head whose margin disagrees with the objective is a config error.
    let mut m = model(6).with_class_head(3, 0.1, 16.0, 6);
    let mut t = Trainer::new(cfg.clone(), m.params()).unwrap();
    assert!(matches!(t.train(&mut m, &blobs), Err(Error::Config(_))));

    // The joint objective needs labels.
    let mut m = model(6).with_class_head(3, 0.35, 16.0, 6);
    let mut t = Trainer::new(cfg, m.params()).unwrap();
    assert!(t.train(&mut m, &data()).is_err());
}

#[test]
fn divergence_is_reported() {
    let mut cfg = config(3);
    cfg.adam.learning_rate = 1e200;
    let mut m = model(7);
    let mut t = Trainer::new(cfg, m.params()).unwrap();
    assert!(matches!(t.train(&mut m, &data()), Err(Error::Numeric(_))));
}

#[test]
fn checkpoints_reject_damage() {
    let mut m = model(8);
    let mut t = Trainer::new(config(1), m.params()).unwrap();
    t.train(&mut m, &data()).unwrap();
    let bytes = Model::TransformerDr(m).to_checkpoint(Some(&t)).to_bytes();
    assert!(Checkpoint::from_bytes(&bytes).is_ok());
    for pos in [0, 9, bytes.len() / 2, bytes.len() - 1] {
        let mut bad = bytes.clone();
        bad[pos] ^= 0x40;
        assert!(Checkpoint::from_bytes(&bad).is_err(), "flip at {pos}");
    }
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 5]).is_err());
}

#[test]
fn every_model_kind_round_trips_through_a_checkpoint() {
    let d = data();
    let pca = transdr::baselines::pca_fit(&d.flat(), 3).unwrap();
    let ae = AeModel::for_images((8, 8, 1), &[64, 16, 4], 1).unwrap();
    let drr = model(9).with_class_head(4, 0.35, 64.0, 9);
    let pre = {
        let cfg = ModelConfig::for_images(8, 8, Grid::new(2, 2), vec![16, 8, 4], 9)
            .unwrap()
            .with_norm(transdr::nn::NormPlacement::Pre);
        TransformerDR::build_symmetric(cfg, 9).unwrap()
    };
    for (kind, m) in [
        ("pca", Model::Pca { model: pca, image_shape: (8, 8, 1) }),
        ("ae", Model::Ae(ae)),
        ("transformer-drr", Model::TransformerDr(drr)),
        ("transformer-dr", Model::TransformerDr(pre)),
    ] {
        assert_eq!(m.kind(), kind);
        let ck = m.to_checkpoint(None);
        let (back, trainer) = Model::from_checkpoint(&Checkpoint::from_bytes(&ck.to_bytes()).unwrap()).unwrap();
        assert!(trainer.is_none());
        assert_eq!(back.code_dim(), m.code_dim());
        let (a, b) = (m.reconstruct(&d).unwrap(), back.reconstruct(&d).unwrap());
        assert_eq!(a.pixels().data(), b.pixels().data(), "{kind}");
    }
}
