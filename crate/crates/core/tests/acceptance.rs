//! Acceptance gate: one PASS/FAIL line per criterion.
//!
//! Criterion failures are reported, not fatal; set
//! `TRANSDR_ACCEPTANCE_STRICT=1` to turn any FAIL into a non-zero exit.
//! The MNIST criteria (4, 5, 6, 8, 9) need the IDX files under
//! `data/mnist` (or `$TRANSDR_DATA_DIR`) and print SKIP without them.
//! Loss curves and checkpoints are written under `$CARGO_TARGET_TMPDIR`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use transdr::baselines::{pca_fit, AeModel};
use transdr::data::{load_mnist_idx, mask_images, mse, patchify, unpatchify, Grid, ImageBatch, MaskSpec};
use transdr::gradcheck::{run_suite, GradcheckOptions};
use transdr::model::{ModelConfig, TransformerDR};
use transdr::training::{AdamConfig, Masking, Model, Objective, TrainConfig, Trainer};
use transdr::Tensor;

mod common;
use common::{covariance, jacobi_eigen};

const GRAD_TOL: f64 = 1e-4;
const PCA_TOL: f64 = 1e-8;
const PCA_TRIALS: usize = 20;
const PATCH_TRIALS: usize = 1000;
const SCHEDULE_TRIALS: usize = 500;

const TRAIN_IMAGES: usize = 2000;
const CODE_DIM: usize = 32;
const EPOCHS: usize = 20;
const STAGES: [usize; 6] = [196, 128, 64, 32, 16, 8];
const AE_LAYERS: [usize; 6] = [784, 512, 256, 128, 64, 32];
const MASK_RATIO: f64 = 0.75;
const MASK_GRID: Grid = Grid { rows: 4, cols: 4 };
const DROP_FACTOR: f64 = 0.5;
const MIN_ACCURACY: f64 = 0.80;
const MSE_FACTOR: f64 = 2.0;

// Shared optimizer settings for both learned models, from the reference
// sweep; see README.
const LEARNING_RATE: f64 = 3e-4;
const BATCH_SIZE: usize = 8;
const SEED: u64 = 1;
const MASK_SEED: u64 = 7;

#[derive(Default)]
struct Gate {
    failed: usize,
    lines: Vec<(u32, String)>,
}

impl Gate {
    fn report(&mut self, id: u32, name: &str, pass: bool, detail: String, started: Instant) {
        if !pass {
            self.failed += 1;
        }
        let line = format!(
            "{} {id} {name}: {detail} ({:.1} s)",
            if pass { "PASS" } else { "FAIL" },
            started.elapsed().as_secs_f64()
        );
        eprintln!("{line}");
        self.lines.push((id, line));
    }

    fn skip(&mut self, id: u32, name: &str, why: &str) {
        self.lines.push((id, format!("SKIP {id} {name}: {why}")));
    }
}

fn gradients(gate: &mut Gate) {
    let t = Instant::now();
    let reports = run_suite(&GradcheckOptions { tolerance: GRAD_TOL, ..Default::default() }).unwrap();
    let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let layers: Vec<&str> = reports.iter().map(|r| r.layer.as_str()).collect();
    gate.report(
        1,
        "gradient correctness",
        worst < GRAD_TOL && reports.iter().all(|r| r.passed),
        format!("max relative error {worst:.2e} < {GRAD_TOL:e} over {}", layers.join(", ")),
        t,
    );
}

fn pca_oracle(gate: &mut Gate) {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..PCA_TRIALS {
        let rows: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let model = pca_fit(&Tensor::from_rows(&rows).unwrap(), 6).unwrap();
        let (values, vectors) = jacobi_eigen(&covariance(&rows));
        for c in 0..6 {
            worst = worst.max((model.variances[c] - values[c]).abs());
            let ours: Vec<f64> = (0..6).map(|r| model.components.at(&[r, c])).collect();
            let sign = ours.iter().zip(&vectors[c]).map(|(a, b)| a * b).sum::<f64>().signum();
            for (a, b) in ours.iter().zip(&vectors[c]) {
                worst = worst.max((a - sign * b).abs());
            }
        }
    }
    gate.report(
        2,
        "PCA oracle equivalence",
        worst < PCA_TOL,
        format!("{PCA_TRIALS} random 10x6 matrices, max deviation {worst:.2e} < {PCA_TOL:e}"),
        t,
    );
}

fn patch_round_trip(gate: &mut Gate) {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut bad = 0;
    for _ in 0..PATCH_TRIALS {
        let (gr, gc) = (rng.random_range(1..6), rng.random_range(1..6));
        let (ph, pw, c) = (rng.random_range(1..6), rng.random_range(1..6), rng.random_range(1..4));
        let n = rng.random_range(1..4);
        let shape = [n, gr * ph, gc * pw, c];
        let len = shape.iter().product();
        let values: Vec<f64> = (0..len).map(|_| rng.random()).collect();
        let batch = ImageBatch::new(Tensor::new(&shape, values).unwrap(), None).unwrap();
        let back = unpatchify(&patchify(&batch, Grid::new(gr, gc)).unwrap(), None).unwrap();
        let same = back.pixels().shape() == batch.pixels().shape()
            && back
                .pixels()
                .data()
                .iter()
                .zip(batch.pixels().data())
                .all(|(a, b)| a.to_bits() == b.to_bits());
        bad += usize::from(!same);
    }
    gate.report(
        3,
        "patch round trip",
        bad == 0,
        format!("{PATCH_TRIALS} random shapes and grids, {bad} mismatches"),
        t,
    );
}

fn symmetry(gate: &mut Gate) {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut violations = 0;
    let mut accepted = 0;
    for trial in 0..SCHEDULE_TRIALS {
        let (gr, gc) = (rng.random_range(1..4), rng.random_range(1..4));
        let (ph, pw) = (rng.random_range(1..6), rng.random_range(1..6));
        let mut dims = vec![ph * pw];
        for _ in 0..rng.random_range(1..5) {
            dims.push(rng.random_range(0..dims[dims.len() - 1] + 2));
        }
        let valid = dims.windows(2).all(|w| w[1] < w[0]) && !dims.contains(&0);
        match ModelConfig::for_images(gr * ph, gc * pw, Grid::new(gr, gc), dims, trial as u64) {
            Ok(cfg) => {
                accepted += 1;
                let m = TransformerDR::build_symmetric(cfg.clone(), trial as u64).unwrap();
                let enc: Vec<_> = m.encoder().iter().map(|b| (b.d_in(), b.d_out())).collect();
                let dec: Vec<_> = m.decoder().iter().map(|b| (b.d_in(), b.d_out())).collect();
                let mirrored: Vec<_> = enc.iter().rev().map(|&(a, b)| (b, a)).collect();
                if !valid || dec != mirrored || cfg.code_dim() >= cfg.input_dim() {
                    violations += 1;
                }
            }
            Err(_) => violations += usize::from(valid),
        }
    }
    gate.report(
        7,
        "symmetry and dimensionality invariants",
        violations == 0 && accepted > 0,
        format!("{SCHEDULE_TRIALS} random schedules, {accepted} accepted, {violations} violations"),
        t,
    );
}

fn data_root() -> PathBuf {
    std::env::var_os("TRANSDR_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

fn load(root: &Path) -> Option<(ImageBatch, ImageBatch)> {
    let split = |prefix: &str| {
        load_mnist_idx(
            &root.join(format!("{prefix}-images-idx3-ubyte")),
            Some(&root.join(format!("{prefix}-labels-idx1-ubyte"))),
        )
        .ok()
    };
    Some((split("train")?.take(TRAIN_IMAGES), split("t10k")?))
}

fn train_config(masking: Option<Masking>, objective: Objective) -> TrainConfig {
    TrainConfig {
        adam: AdamConfig { learning_rate: LEARNING_RATE, ..Default::default() },
        batch_size: BATCH_SIZE,
        epochs: EPOCHS,
        seed: SEED,
        masking,
        objective,
        ..Default::default()
    }
}

fn transformer() -> TransformerDR {
    let cfg = ModelConfig::for_images(28, 28, Grid::new(2, 2), STAGES.to_vec(), SEED).unwrap();
    TransformerDR::build_symmetric(cfg, SEED).unwrap()
}

fn autoencoder() -> AeModel {
    AeModel::for_images((28, 28, 1), &AE_LAYERS, SEED).unwrap()
}

struct Run {
    model: Model,
    losses: Vec<f64>,
    csv: String,
    checkpoint: Vec<u8>,
    seconds: f64,
}

fn run_transformer(train: &ImageBatch, cfg: TrainConfig, head: bool) -> Run {
    let t = Instant::now();
    let mut m = transformer();
    if let Objective::Joint { margin, scale, .. } = cfg.objective {
        assert!(head);
        m = m.with_class_head(10, margin, scale, SEED);
    }
    let mut trainer = Trainer::new(cfg, m.params()).unwrap();
    trainer.train(&mut m, train).unwrap();
    finish(Model::TransformerDr(m), &trainer, t)
}

fn run_autoencoder(train: &ImageBatch, cfg: TrainConfig) -> Run {
    let t = Instant::now();
    let mut m = autoencoder();
    let mut trainer = Trainer::new(cfg, m.params()).unwrap();
    trainer.train(&mut m, train).unwrap();
    finish(Model::Ae(m), &trainer, t)
}

fn finish(model: Model, trainer: &Trainer, t: Instant) -> Run {
    Run {
        checkpoint: model.to_checkpoint(Some(trainer)).to_bytes(),
        csv: trainer.curve.to_csv(false),
        losses: trainer.curve.losses.clone(),
        model,
        seconds: t.elapsed().as_secs_f64(),
    }
}

fn test_mse(model: &Model, input: &ImageBatch, target: &ImageBatch) -> f64 {
    mse(target, &model.reconstruct(input).unwrap()).unwrap()
}

fn mnist_criteria(gate: &mut Gate, train: &ImageBatch, test: &ImageBatch, out: &Path) {
    // 4: plain reconstruction against PCA at equal code width.
    let t4 = Instant::now();
    let pca = Model::Pca { model: pca_fit(&train.flat(), CODE_DIM).unwrap(), image_shape: (28, 28, 1) };
    let pca_mse = test_mse(&pca, test, test);
    let tdr = run_transformer(train, train_config(None, Objective::Mse), false);
    let ae = run_autoencoder(train, train_config(None, Objective::Mse));
    assert_eq!(tdr.model.code_dim(), CODE_DIM);
    assert_eq!(ae.model.code_dim(), CODE_DIM);
    let tdr_mse = test_mse(&tdr.model, test, test);
    let ae_mse = test_mse(&ae.model, test, test);
    for (name, run) in [("transformer-dr", &tdr), ("ae", &ae)] {
        std::fs::write(out.join(format!("{name}-loss.csv")), &run.csv).unwrap();
        std::fs::write(out.join(format!("{name}.ckpt")), &run.checkpoint).unwrap();
    }
    gate.report(
        4,
        "desk reconstruction ordering",
        tdr_mse < pca_mse && ae_mse < pca_mse,
        format!(
            "test MSE transformer-dr {tdr_mse:.3}, ae {ae_mse:.3}, pca-{CODE_DIM} {pca_mse:.3}; \
             {TRAIN_IMAGES} train / {} test images, {EPOCHS} epochs, lr {LEARNING_RATE:e}, batch {BATCH_SIZE}",
            test.n()
        ),
        t4,
    );

    // 6: training dynamics of the same runs.
    let t6 = Instant::now();
    let drop = |r: &Run| r.losses[EPOCHS - 1] / r.losses[0];
    let (dt, da) = (drop(&tdr), drop(&ae));
    gate.report(
        6,
        "training dynamics",
        dt < DROP_FACTOR && da < DROP_FACTOR,
        format!(
            "epoch-{EPOCHS}/epoch-1 loss transformer-dr {dt:.3} ({:.2} → {:.2}), ae {da:.3} ({:.2} → {:.2}), \
             need < {DROP_FACTOR}; curves in {}",
            tdr.losses[0],
            tdr.losses[EPOCHS - 1],
            ae.losses[0],
            ae.losses[EPOCHS - 1],
            out.display()
        ),
        t6,
    );

    // 5: masked inputs, models trained on masked inputs.
    let t5 = Instant::now();
    let masking = Some(Masking { ratio: MASK_RATIO, grid: MASK_GRID });
    let masked_test = mask_images(test, MASK_GRID, &MaskSpec::new(MASK_RATIO, MASK_SEED).unwrap()).unwrap();
    let mtdr = run_transformer(train, train_config(masking, Objective::Mse), false);
    let mae = run_autoencoder(train, train_config(masking, Objective::Mse));
    let mtdr_mse = test_mse(&mtdr.model, &masked_test, test);
    let mae_mse = test_mse(&mae.model, &masked_test, test);
    let mean = train.mean_image();
    let mean_mse = mse(test, &mean.select(&vec![0; test.n()])).unwrap();
    gate.report(
        5,
        "masked reconstruction ordering",
        mtdr_mse < mae_mse && mae_mse < mean_mse && mtdr_mse < mean_mse,
        format!(
            "masked-input test MSE transformer-dr {mtdr_mse:.3}, ae {mae_mse:.3}, mean image {mean_mse:.3}; \
             ratio {MASK_RATIO}, {MASK_GRID} grid"
        ),
        t5,
    );

    // 8: joint objective.
    let t8 = Instant::now();
    let joint = Objective::Joint { lambda: 1.0, margin: 0.35, scale: 64.0 };
    let drr = run_transformer(train, train_config(None, joint), true);
    let Model::TransformerDr(drr_model) = &drr.model else { unreachable!() };
    let predicted = drr_model.classify(test).unwrap();
    let labels = test.labels().unwrap();
    let correct = predicted.iter().zip(labels).filter(|&(&p, &l)| p == l as usize).count();
    let accuracy = correct as f64 / test.n() as f64;
    let drr_mse = test_mse(&drr.model, test, test);
    gate.report(
        8,
        "transformer-drr desk proxy",
        accuracy > MIN_ACCURACY && drr_mse <= MSE_FACTOR * tdr_mse,
        format!(
            "held-out accuracy {:.1}% (need > {:.0}%), test MSE {drr_mse:.3} vs {MSE_FACTOR}x {tdr_mse:.3}",
            100.0 * accuracy,
            100.0 * MIN_ACCURACY
        ),
        t8,
    );

    // 9: a second, independent run of criterion 4.
    let t9 = Instant::now();
    let tdr2 = run_transformer(train, train_config(None, Objective::Mse), false);
    let ae2 = run_autoencoder(train, train_config(None, Objective::Mse));
    let same = |a: &Run, b: &Run| a.checkpoint == b.checkpoint && a.csv == b.csv;
    gate.report(
        9,
        "determinism",
        same(&tdr, &tdr2) && same(&ae, &ae2),
        format!(
            "checkpoints {} + {} bytes and loss CSVs {}",
            tdr.checkpoint.len(),
            ae.checkpoint.len(),
            if same(&tdr, &tdr2) && same(&ae, &ae2) { "bitwise identical" } else { "differ" }
        ),
        t9,
    );
    eprintln!(
        "info training seconds: transformer-dr {:.0}, ae {:.0}, masked {:.0} + {:.0}, drr {:.0}",
        tdr.seconds, ae.seconds, mtdr.seconds, mae.seconds, drr.seconds
    );
}

fn main() {
    let mut gate = Gate::default();
    gradients(&mut gate);
    pca_oracle(&mut gate);
    patch_round_trip(&mut gate);
    symmetry(&mut gate);

    let root = data_root();
    match load(&root) {
        Some((train, test)) => {
            let out = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
            std::fs::create_dir_all(&out).unwrap();
            mnist_criteria(&mut gate, &train, &test, &out);
        }
        None => {
            let why = format!("no MNIST IDX files in {}", root.display());
            for (id, name) in [
                (4, "desk reconstruction ordering"),
                (5, "masked reconstruction ordering"),
                (6, "training dynamics"),
                (8, "transformer-drr desk proxy"),
                (9, "determinism"),
            ] {
                gate.skip(id, name, &why);
            }
        }
    }
    gate.lines.sort_by_key(|(id, _)| *id);
    for (_, line) in &gate.lines {
        println!("{line}");
    }
    println!("acceptance: {} criteria failed", gate.failed);
    if gate.failed > 0 && std::env::var_os("TRANSDR_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
