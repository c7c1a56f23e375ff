//! Command-line interface: `train`, `reconstruct`, `visualize`,
//! `gradcheck` and `compare`.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data, parse or
//! checkpoint error, 3 numeric failure (including failed gradient checks).

mod config;
mod manifest;
mod render;

pub use config::{expand_config, parse_config};
pub use manifest::{sha256_file, timestamp, Manifest};
pub use render::{image_grid, scatter, PALETTE};

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::autodiff::OpKind;
use crate::baselines::{lda_fit, pca_fit, AeModel};
use crate::data::{self, gaussian_blobs, load_image_dir, load_mnist_idx, mask_images, BlobParams, Grid, ImageBatch, MaskSpec};
use crate::error::{Error, Result};
use crate::gradcheck::{run_suite, GradcheckOptions};
use crate::model::{parse_dims, ModelConfig, TransformerDR};
use crate::nn::NormPlacement;
use crate::tensor::{set_precision, Precision, Tensor};
use crate::training::{AdamConfig, Masking, Model, Objective, TrainConfig, Trainer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Environment variable naming the dataset root when `--data-dir` is absent.
pub const DATA_DIR_ENV: &str = "TRANSDR_DATA_DIR";

#[derive(Parser, Debug)]
#[command(
    name = "transdr",
    version,
    about = "Dimension-reducing Transformer encoder/decoder with PCA, LDA and autoencoder baselines"
)]
pub struct Cli {
    /// key=value file supplying defaults for any long flag
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model and write a checkpoint, loss curve and manifest
    Train(TrainArgs),
    /// Reconstruct images with a saved model
    Reconstruct(ReconstructArgs),
    /// Embed images in 2-D and draw a scatter plot
    Visualize(VisualizeArgs),
    /// Compare analytic gradients with finite differences
    Gradcheck(GradcheckArgs),
    /// Tabulate reconstruction error across models
    Compare(CompareArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    TransformerDr,
    TransformerDrr,
    Ae,
    Pca,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DatasetKind {
    Mnist,
    Blobs,
    Images,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PrecisionArg {
    F64,
    F32,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Directory holding the MNIST IDX files [default: $TRANSDR_DATA_DIR, then data/mnist]
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = DatasetKind::Mnist)]
    pub dataset: DatasetKind,
    /// Directory of PGM/PPM files for `--dataset images`
    #[arg(long)]
    pub image_dir: Option<PathBuf>,
    /// Classes in the synthetic blob dataset
    #[arg(long, default_value_t = 3)]
    pub blob_classes: usize,
    /// Samples per class in the synthetic blob dataset
    #[arg(long, default_value_t = 100)]
    pub blob_per_class: usize,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value_t = Method::TransformerDr)]
    pub method: Method,
    /// Per-patch widths of the encoder stages, first = flattened patch size
    #[arg(long, default_value = "196,128,64,32,16,8")]
    pub stages: String,
    /// Patch grid as ROWSxCOLS
    #[arg(long, default_value = "2x2")]
    pub grid: Grid,
    /// Layer norm before (pre) or after (post) the attention residual
    #[arg(long, default_value = "post")]
    pub norm: NormPlacement,
    /// Autoencoder layer widths, input first
    #[arg(long, default_value = "784,512,256,128,64,32")]
    pub layers: String,
    /// PCA components
    #[arg(long, default_value_t = 32)]
    pub k: usize,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    pub beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub eps: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of patches zeroed in every training input
    #[arg(long)]
    pub mask_ratio: Option<f64>,
    /// Patch grid used for masking
    #[arg(long, default_value = "4x4")]
    pub mask_grid: Grid,
    /// Weight of the classification term (transformer-drr)
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    /// Additive cosine margin (transformer-drr)
    #[arg(long, default_value_t = 0.35)]
    pub margin: f64,
    /// Logit scale (transformer-drr)
    #[arg(long, default_value_t = 64.0)]
    pub scale: f64,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    /// Use only the first N training images
    #[arg(long)]
    pub train_limit: Option<usize>,
    #[arg(long, value_enum, default_value_t = PrecisionArg::F64)]
    pub precision: PrecisionArg,
    /// Continue training from a checkpoint up to `--epochs` in total
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Record wall-clock seconds in the loss CSV (otherwise 0)
    #[arg(long)]
    pub timings: bool,
    /// Output directory [default: runs/<timestamp>-s<seed>]
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct ReconstructArgs {
    /// Checkpoint of any model kind, including PCA
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
    /// Number of images to reconstruct
    #[arg(long, default_value_t = 16)]
    pub limit: usize,
    /// Mask this fraction of patches before reconstructing
    #[arg(long)]
    pub mask_ratio: Option<f64>,
    /// Patch grid used for masking
    #[arg(long, default_value = "4x4")]
    pub grid: Grid,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum VisualMethod {
    Pca,
    Lda,
    /// A saved model with a 2-D code
    Model,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct VisualizeArgs {
    #[arg(long, value_enum, default_value_t = VisualMethod::Pca)]
    pub method: VisualMethod,
    /// Checkpoint for `--method model`
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
    #[arg(long, default_value_t = 2000)]
    pub limit: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Scatter plot side length in pixels
    #[arg(long, default_value_t = 512)]
    pub size: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Finite-difference step
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    /// Largest accepted relative error
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Scale the backward rule of this operation by 1.5 (negative control)
    #[arg(long, hide = true)]
    pub corrupt: Option<String>,
    /// Also write gradcheck.csv and a manifest here
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct CompareArgs {
    /// Checkpoints to evaluate (repeatable)
    #[arg(long = "model")]
    pub models: Vec<PathBuf>,
    /// Also fit PCA with this many components on the training split
    #[arg(long)]
    pub pca_k: Option<usize>,
    /// Training images used for the PCA fit
    #[arg(long)]
    pub train_limit: Option<usize>,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
    /// Evaluate on the first N images only
    #[arg(long)]
    pub limit: Option<usize>,
    /// Also report MSE from inputs with this fraction of patches masked
    #[arg(long)]
    pub mask_ratio: Option<f64>,
    #[arg(long, default_value = "4x4")]
    pub mask_grid: Grid,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
}

/// Maps a library error onto the exit-code contract.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numeric(_) => EXIT_NUMERIC,
        Error::Parse { .. } | Error::Io { .. } | Error::Checkpoint(_) => EXIT_DATA,
        Error::Dimension { .. } | Error::Shape(_) | Error::Contract(_) | Error::Config(_) => EXIT_USAGE,
    }
}

/// Parses `argv` (program name first), runs the command, and returns the
/// process exit code. Diagnostics go to stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let expanded = match expand_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e).max(EXIT_USAGE);
        }
    };
    let cli = match Cli::try_parse_from(&expanded) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let shown: Vec<String> = expanded.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(cli.command, &shown) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn execute(cmd: Command, argv: &[String]) -> Result<i32> {
    match cmd {
        Command::Train(a) => cmd_train(a, argv).map(|_| EXIT_OK),
        Command::Reconstruct(a) => cmd_reconstruct(a, argv).map(|_| EXIT_OK),
        Command::Visualize(a) => cmd_visualize(a, argv).map(|_| EXIT_OK),
        Command::Gradcheck(a) => cmd_gradcheck(a, argv),
        Command::Compare(a) => cmd_compare(a, argv).map(|_| EXIT_OK),
    }
}

/// Creates the output directory, defaulting to `runs/<timestamp>-s<seed>`.
pub fn output_dir(out: Option<&Path>, seed: u64) -> Result<PathBuf> {
    let dir = match out {
        Some(p) => p.to_path_buf(),
        None => {
            let base = format!("{}-s{seed}", chrono::Utc::now().format("%Y%m%d-%H%M%S"));
            let mut dir = Path::new("runs").join(&base);
            let mut n = 2;
            while dir.exists() {
                dir = Path::new("runs").join(format!("{base}-{n}"));
                n += 1;
            }
            dir
        }
    };
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn data_root(args: &DataArgs) -> PathBuf {
    args.data_dir
        .clone()
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data/mnist"))
}

/// Loads one split of the selected dataset, keeping the first `limit` images.
pub fn load_dataset(
    args: &DataArgs,
    split: Split,
    limit: Option<usize>,
    seed: u64,
) -> Result<(ImageBatch, Vec<PathBuf>)> {
    let (batch, inputs) = match args.dataset {
        DatasetKind::Mnist => {
            let root = data_root(args);
            let prefix = match split {
                Split::Train => "train",
                Split::Test => "t10k",
            };
            let images = root.join(format!("{prefix}-images-idx3-ubyte"));
            let labels = root.join(format!("{prefix}-labels-idx1-ubyte"));
            let have_labels = labels.exists();
            let batch = load_mnist_idx(&images, have_labels.then_some(labels.as_path()))?;
            let mut inputs = vec![images];
            if have_labels {
                inputs.push(labels);
            }
            (batch, inputs)
        }
        DatasetKind::Blobs => {
            let params = BlobParams {
                classes: args.blob_classes,
                per_class: args.blob_per_class,
                ..BlobParams::default()
            };
            let split_seed = seed.wrapping_add(matches!(split, Split::Test) as u64);
            (gaussian_blobs(params, split_seed)?, Vec::new())
        }
        DatasetKind::Images => {
            let dir = args
                .image_dir
                .clone()
                .ok_or_else(|| Error::Config("--dataset images needs --image-dir".into()))?;
            (load_image_dir(&dir)?, vec![dir])
        }
    };
    let batch = match limit {
        Some(n) if n < batch.n() => batch.take(n),
        Some(0) => return Err(Error::Config("--limit must be positive".into())),
        _ => batch,
    };
    Ok((batch, inputs))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_image(dir: &Path, stem: &str, img: &data::RawImage) -> Result<PathBuf> {
    let ext = if img.channels == 1 { "pgm" } else { "ppm" };
    let path = dir.join(format!("{stem}.{ext}"));
    data::pnm::write(&path, img)?;
    Ok(path)
}

fn train_config(a: &TrainArgs) -> TrainConfig {
    TrainConfig {
        adam: AdamConfig {
            learning_rate: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
        },
        batch_size: a.batch_size,
        epochs: a.epochs,
        seed: a.seed,
        masking: a.mask_ratio.map(|ratio| Masking {
            ratio,
            grid: a.mask_grid,
        }),
        objective: match a.method {
            Method::TransformerDrr => Objective::Joint {
                lambda: a.lambda,
                margin: a.margin,
                scale: a.scale,
            },
            _ => Objective::Mse,
        },
        precision: match a.precision {
            PrecisionArg::F64 => Precision::F64,
            PrecisionArg::F32 => Precision::F32,
        },
    }
}

/// Trains `model` for the epochs `trainer` still owes, printing progress.
pub fn train_model(model: &mut Model, trainer: &mut Trainer, data: &ImageBatch, quiet: bool) -> Result<()> {
    let left = trainer.config.epochs.saturating_sub(trainer.epochs_done);
    let report = |e: usize, loss: f64, secs: f64| {
        if !quiet {
            println!("epoch {e:>3}  loss {loss:.6}  {secs:.2}s");
        }
    };
    set_precision(trainer.config.precision);
    let res = match model {
        Model::TransformerDr(m) => trainer.train_epochs(m, data, left, report),
        Model::Ae(m) => trainer.train_epochs(m, data, left, report),
        Model::Pca { .. } => Err(Error::Config("PCA is fitted, not trained".into())),
    };
    set_precision(Precision::F64);
    res
}

/// Builds an untrained model for `train`.
pub fn build_model(method: Method, a: &TrainArgs, batch: &ImageBatch) -> Result<Model> {
    let (h, w, c) = (batch.height(), batch.width(), batch.channels());
    match method {
        Method::TransformerDr | Method::TransformerDrr => {
            let mut cfg =
                ModelConfig::for_images(h, w, a.grid, parse_dims(&a.stages)?, a.seed)?.with_norm(a.norm);
            cfg.channels = c;
            cfg.validate()?;
            let mut m = TransformerDR::build_symmetric(cfg, a.seed)?;
            if method == Method::TransformerDrr {
                if a.classes < 2 {
                    return Err(Error::Config("--classes must be at least 2".into()));
                }
                m = m.with_class_head(a.classes, a.margin, a.scale, a.seed);
            }
            Ok(Model::TransformerDr(m))
        }
        Method::Ae => Ok(Model::Ae(AeModel::for_images((h, w, c), &parse_dims(&a.layers)?, a.seed)?)),
        Method::Pca => Ok(Model::Pca {
            model: pca_fit(&batch.flat(), a.k)?,
            image_shape: (h, w, c),
        }),
    }
}

pub fn cmd_train(a: TrainArgs, argv: &[String]) -> Result<PathBuf> {
    if a.method == Method::Pca && a.mask_ratio.is_some() {
        return Err(Error::Config("--mask-ratio does not apply to PCA".into()));
    }
    let (batch, inputs) = load_dataset(&a.data, Split::Train, a.train_limit, a.seed)?;
    if a.method == Method::TransformerDrr {
        let labels = batch
            .labels()
            .ok_or_else(|| Error::Config("transformer-drr needs labelled data".into()))?;
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= a.classes) {
            return Err(Error::Config(format!("label {l} outside --classes {}", a.classes)));
        }
    }
    let (mut model, trainer) = match &a.resume {
        Some(path) => {
            let (model, trainer) = Model::load(path)?;
            let mut trainer = trainer
                .ok_or_else(|| Error::Checkpoint(format!("{} holds no training state", path.display())))?;
            trainer.config.epochs = a.epochs;
            (model, Some(trainer))
        }
        None => {
            let model = build_model(a.method, &a, &batch)?;
            let trainer = match &model {
                Model::Pca { .. } => None,
                m => Some(Trainer::new(train_config(&a), m.params().unwrap())?),
            };
            (model, trainer)
        }
    };
    let dir = output_dir(a.out.as_deref(), a.seed)?;
    let mut manifest = Manifest::new("train", argv, a.seed);
    manifest.inputs = inputs;
    manifest.inputs.extend(a.resume.clone());
    manifest.set("method", model.kind());
    manifest.set("images", batch.n());
    manifest.set("code_dim", model.code_dim());
    let mut trainer = trainer;
    if let Some(t) = trainer.as_mut() {
        train_model(&mut model, t, &batch, false)?;
        for (k, v) in t.config.to_pairs() {
            manifest.set(&k, v);
        }
        let csv = dir.join("loss.csv");
        write_text(&csv, &t.curve.to_csv(a.timings))?;
        manifest.outputs.push(csv);
        manifest.metric("final_loss", t.curve.losses.last().copied());
        manifest.metric("epoch_seconds", t.curve.seconds.clone());
    } else {
        manifest.set("k", model.code_dim());
    }
    let recon = model.reconstruct(&batch)?;
    manifest.metric("train_mse", data::mse(&batch, &recon)?);
    let ckpt = dir.join("model.ckpt");
    model.save(trainer.as_ref(), &ckpt)?;
    manifest.outputs.insert(0, ckpt);
    manifest.write(&dir)?;
    println!("{} model written to {}", model.kind(), dir.display());
    Ok(dir)
}

pub fn cmd_reconstruct(a: ReconstructArgs, argv: &[String]) -> Result<PathBuf> {
    let (model, _) = Model::load(&a.model)?;
    let (batch, inputs) = load_dataset(&a.data, a.split, Some(a.limit), a.seed)?;
    let masked = match a.mask_ratio {
        Some(r) => Some(mask_images(&batch, a.grid, &MaskSpec::new(r, a.seed)?)?),
        None => None,
    };
    let recon = model.reconstruct(masked.as_ref().unwrap_or(&batch))?;
    let errors = data::per_image_sq_error(&batch, &recon)?;
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;

    let dir = output_dir(a.out.as_deref(), a.seed)?;
    let recon_view = recon.clamped();
    let grid = match &masked {
        Some(m) => image_grid(&[m, &recon_view, &batch])?,
        None => image_grid(&[&batch, &recon_view])?,
    };
    let img = write_image(&dir, "reconstruction", &grid)?;
    let mut csv = String::from("id,mse\n");
    for (i, e) in errors.iter().enumerate() {
        let _ = writeln!(csv, "{i},{e}");
    }
    let csv_path = dir.join("mse.csv");
    write_text(&csv_path, &csv)?;

    let mut manifest = Manifest::new("reconstruct", argv, a.seed);
    manifest.inputs = inputs;
    manifest.inputs.insert(0, a.model.clone());
    manifest.set("method", model.kind());
    manifest.set("images", batch.n());
    manifest.set("split", format!("{:?}", a.split).to_lowercase());
    if let Some(r) = a.mask_ratio {
        manifest.set("mask_ratio", r);
        manifest.set("mask_grid", a.grid);
    }
    manifest.metric("mse", mean);
    manifest.outputs = vec![img, csv_path];
    manifest.write(&dir)?;
    println!("{} reconstruction MSE {mean:.6} over {} images -> {}", model.kind(), batch.n(), dir.display());
    Ok(dir)
}

pub fn cmd_visualize(a: VisualizeArgs, argv: &[String]) -> Result<PathBuf> {
    let (batch, mut inputs) = load_dataset(&a.data, a.split, Some(a.limit), a.seed)?;
    let (codes, name): (Tensor, String) = match a.method {
        VisualMethod::Pca => (pca_fit(&batch.flat(), 2)?.encode(&batch.flat())?, "pca".into()),
        VisualMethod::Lda => {
            let labels: Vec<usize> = batch
                .labels()
                .ok_or_else(|| Error::Config("LDA needs labelled data".into()))?
                .iter()
                .map(|&l| l as usize)
                .collect();
            (lda_fit(&batch.flat(), &labels, 2)?.transform(&batch.flat())?, "lda".into())
        }
        VisualMethod::Model => {
            let path = a
                .model
                .as_ref()
                .ok_or_else(|| Error::Config("--method model needs --model".into()))?;
            let (model, _) = Model::load(path)?;
            if model.code_dim() != 2 {
                return Err(Error::Config(format!(
                    "visualization needs a 2-D code, {} has {}",
                    path.display(),
                    model.code_dim()
                )));
            }
            inputs.insert(0, path.clone());
            (model.encode(&batch)?, model.kind().into())
        }
    };
    let labels: Vec<u8> = batch
        .labels()
        .map(<[u8]>::to_vec)
        .unwrap_or_else(|| vec![0; batch.n()]);
    let points: Vec<(f64, f64)> = (0..codes.rows()).map(|i| (codes.row(i)[0], codes.row(i)[1])).collect();
    let mut csv = String::from("id,label,x,y\n");
    for (i, ((x, y), l)) in points.iter().zip(&labels).enumerate() {
        let _ = writeln!(csv, "{i},{l},{x},{y}");
    }
    let dir = output_dir(a.out.as_deref(), a.seed)?;
    let csv_path = dir.join("embeddings.csv");
    write_text(&csv_path, &csv)?;
    let img = write_image(&dir, "scatter", &scatter(&points, &labels, a.size))?;
    let mut manifest = Manifest::new("visualize", argv, a.seed);
    manifest.inputs = inputs;
    manifest.set("method", &name);
    manifest.set("images", batch.n());
    manifest.outputs = vec![csv_path, img];
    manifest.write(&dir)?;
    println!("{name} embedding of {} images -> {}", batch.n(), dir.display());
    Ok(dir)
}

pub fn cmd_gradcheck(a: GradcheckArgs, argv: &[String]) -> Result<i32> {
    let fault = match &a.corrupt {
        None => None,
        Some(name) => Some(OpKind::parse(name).ok_or_else(|| Error::Config(format!("unknown operation {name:?}")))?),
    };
    set_precision(Precision::F64);
    let opts = GradcheckOptions {
        seed: a.seed,
        step: a.step,
        tolerance: a.tolerance,
        fault,
    };
    let reports = run_suite(&opts)?;
    let mut csv = String::from("layer,max_rel_error,checked,passed\n");
    for r in &reports {
        println!(
            "{:<18} {:>10.3e}  {:>5} values  {}",
            r.layer,
            r.max_rel_error,
            r.checked,
            if r.passed { "PASS" } else { "FAIL" }
        );
        let _ = writeln!(csv, "{},{},{},{}", r.layer, r.max_rel_error, r.checked, r.passed);
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.layer.as_str()).collect();
    if let Some(out) = &a.out {
        let dir = output_dir(Some(out), a.seed)?;
        let path = dir.join("gradcheck.csv");
        write_text(&path, &csv)?;
        let mut manifest = Manifest::new("gradcheck", argv, a.seed);
        manifest.set("step", a.step);
        manifest.set("tolerance", a.tolerance);
        manifest.metric("failed", failed.clone());
        manifest.outputs = vec![path];
        manifest.write(&dir)?;
    }
    if failed.is_empty() {
        println!("all {} layers pass", reports.len());
        Ok(EXIT_OK)
    } else {
        eprintln!("gradient check failed for: {}", failed.join(", "));
        Ok(EXIT_NUMERIC)
    }
}

/// One row of the comparison table.
#[derive(Clone, Debug, PartialEq)]
pub struct CompareRow {
    pub method: String,
    pub source: String,
    pub code_dim: usize,
    pub mse: f64,
    pub masked_mse: Option<f64>,
}

pub fn format_table(rows: &[CompareRow]) -> (String, String) {
    let masked = rows.iter().any(|r| r.masked_mse.is_some());
    let mut csv = String::from("method,source,code_dim,mse");
    if masked {
        csv.push_str(",masked_mse");
    }
    csv.push('\n');
    let mut cells = vec![vec!["method".to_string(), "source".into(), "code_dim".into(), "mse".into()]];
    if masked {
        cells[0].push("masked_mse".into());
    }
    for r in rows {
        let _ = write!(csv, "{},{},{},{}", r.method, r.source, r.code_dim, r.mse);
        let mut line = vec![r.method.clone(), r.source.clone(), r.code_dim.to_string(), format!("{:.6}", r.mse)];
        if masked {
            let m = r.masked_mse.map_or(String::new(), |m| m.to_string());
            let _ = write!(csv, ",{m}");
            line.push(r.masked_mse.map_or("-".into(), |m| format!("{m:.6}")));
        }
        csv.push('\n');
        cells.push(line);
    }
    let widths: Vec<usize> = (0..cells[0].len())
        .map(|j| cells.iter().map(|r| r[j].len()).max().unwrap_or(0))
        .collect();
    let mut text = String::new();
    for row in &cells {
        let parts: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(text, "{}", parts.join("  ").trim_end());
    }
    (csv, text)
}

pub fn cmd_compare(a: CompareArgs, argv: &[String]) -> Result<Vec<CompareRow>> {
    if a.models.is_empty() && a.pca_k.is_none() {
        return Err(Error::Config("nothing to compare: give --model and/or --pca-k".into()));
    }
    let (test, mut inputs) = load_dataset(&a.data, a.split, a.limit, a.seed)?;
    let mut models: Vec<(Model, String)> = Vec::new();
    for p in &a.models {
        models.push((Model::load(p)?.0, p.display().to_string()));
        inputs.push(p.clone());
    }
    if let Some(k) = a.pca_k {
        let (train, train_inputs) = load_dataset(&a.data, Split::Train, a.train_limit, a.seed)?;
        let model = Model::Pca {
            model: pca_fit(&train.flat(), k)?,
            image_shape: (train.height(), train.width(), train.channels()),
        };
        models.push((model, format!("fit on {} training images", train.n())));
        inputs.extend(train_inputs);
    }
    let dims: Vec<usize> = models.iter().map(|(m, _)| m.code_dim()).collect();
    if dims.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::Config(format!("code dimensions differ across methods: {dims:?}")));
    }
    let masked_input = match a.mask_ratio {
        Some(r) => Some(mask_images(&test, a.mask_grid, &MaskSpec::new(r, a.seed)?)?),
        None => None,
    };
    let mut rows = Vec::new();
    for (model, source) in &models {
        let mse = data::mse(&test, &model.reconstruct(&test)?)?;
        let masked_mse = match &masked_input {
            Some(m) => Some(data::mse(&test, &model.reconstruct(m)?)?),
            None => None,
        };
        rows.push(CompareRow {
            method: model.kind().to_string(),
            source: source.clone(),
            code_dim: model.code_dim(),
            mse,
            masked_mse,
        });
    }
    let (csv, text) = format_table(&rows);
    print!("{text}");
    let dir = output_dir(a.out.as_deref(), a.seed)?;
    let csv_path = dir.join("compare.csv");
    let txt_path = dir.join("compare.txt");
    write_text(&csv_path, &csv)?;
    write_text(&txt_path, &text)?;
    let mut manifest = Manifest::new("compare", argv, a.seed);
    manifest.inputs = inputs;
    manifest.set("images", test.n());
    if let Some(r) = a.mask_ratio {
        manifest.set("mask_ratio", r);
        manifest.set("mask_grid", a.mask_grid);
    }
    for r in &rows {
        manifest.metric(&format!("mse.{}", r.method), r.mse);
        if let Some(m) = r.masked_mse {
            manifest.metric(&format!("masked_mse.{}", r.method), m);
        }
    }
    manifest.outputs = vec![csv_path, txt_path];
    manifest.write(&dir)?;
    Ok(rows)
}
