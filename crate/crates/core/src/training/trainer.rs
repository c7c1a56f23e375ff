use std::time::Instant;

use rand::seq::SliceRandom;

use super::adam::{Adam, AdamConfig};
use crate::autodiff::{Tape, Var};
use crate::baselines::AeModel;
use crate::data::{mask_images, Grid, ImageBatch, MaskSpec};
use crate::error::{Error, Result};
use crate::model::{reconstruction_loss, TransformerDR};
use crate::nn::{seeded_rng, Bindings, ParamSet};
use crate::tensor::{precision, Precision};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Objective {
    Mse,
    /// Reconstruction plus `lambda` times margin-cosine cross-entropy.
    Joint { lambda: f64, margin: f64, scale: f64 },
}

/// Patch masking applied to training inputs; the target stays unmasked.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Masking {
    pub ratio: f64,
    pub grid: Grid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub masking: Option<Masking>,
    pub objective: Objective,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            batch_size: 64,
            epochs: 20,
            seed: 0,
            masking: None,
            objective: Objective::Mse,
            precision: Precision::F64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if let Some(m) = self.masking {
            MaskSpec::new(m.ratio, 0)?;
        }
        if let Objective::Joint { lambda, margin, scale } = self.objective {
            if !(lambda >= 0.0) || !margin.is_finite() || !(scale > 0.0) {
                return Err(Error::Config(format!(
                    "joint objective needs lambda ≥ 0 and scale > 0, got λ={lambda} m={margin} s={scale}"
                )));
            }
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut v = vec![
            ("train.learning_rate", self.adam.learning_rate.to_string()),
            ("train.beta1", self.adam.beta1.to_string()),
            ("train.beta2", self.adam.beta2.to_string()),
            ("train.eps", self.adam.eps.to_string()),
            ("train.batch_size", self.batch_size.to_string()),
            ("train.epochs", self.epochs.to_string()),
            ("train.seed", self.seed.to_string()),
            (
                "train.precision",
                match self.precision {
                    Precision::F64 => "f64",
                    Precision::F32 => "f32",
                }
                .to_string(),
            ),
        ];
        if let Some(m) = self.masking {
            v.push(("train.mask_ratio", m.ratio.to_string()));
            v.push(("train.mask_grid", m.grid.to_string()));
        }
        match self.objective {
            Objective::Mse => v.push(("train.objective", "mse".into())),
            Objective::Joint { lambda, margin, scale } => {
                v.push(("train.objective", "joint".into()));
                v.push(("train.lambda", lambda.to_string()));
                v.push(("train.margin", margin.to_string()));
                v.push(("train.scale", scale.to_string()));
            }
        }
        v.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let get = |k: &str| pairs.iter().find(|(key, _)| key == k).map(|(_, v)| v.as_str());
        fn parse<T: std::str::FromStr>(k: &str, v: Option<&str>) -> Result<T> {
            let v = v.ok_or_else(|| Error::Checkpoint(format!("missing key {k}")))?;
            v.parse()
                .map_err(|_| Error::Checkpoint(format!("bad value {v:?} for {k}")))
        }
        let masking = match get("train.mask_ratio") {
            None => None,
            Some(r) => Some(Masking {
                ratio: parse("train.mask_ratio", Some(r))?,
                grid: parse("train.mask_grid", get("train.mask_grid"))?,
            }),
        };
        let objective = match get("train.objective") {
            Some("mse") => Objective::Mse,
            Some("joint") => Objective::Joint {
                lambda: parse("train.lambda", get("train.lambda"))?,
                margin: parse("train.margin", get("train.margin"))?,
                scale: parse("train.scale", get("train.scale"))?,
            },
            other => return Err(Error::Checkpoint(format!("bad objective {other:?}"))),
        };
        let precision = match get("train.precision") {
            Some("f64") => Precision::F64,
            Some("f32") => Precision::F32,
            other => return Err(Error::Checkpoint(format!("bad precision {other:?}"))),
        };
        let cfg = TrainConfig {
            adam: AdamConfig {
                learning_rate: parse("train.learning_rate", get("train.learning_rate"))?,
                beta1: parse("train.beta1", get("train.beta1"))?,
                beta2: parse("train.beta2", get("train.beta2"))?,
                eps: parse("train.eps", get("train.eps"))?,
            },
            batch_size: parse("train.batch_size", get("train.batch_size"))?,
            epochs: parse("train.epochs", get("train.epochs"))?,
            seed: parse("train.seed", get("train.seed"))?,
            masking,
            objective,
            precision,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Per-epoch mean training loss and wall-clock seconds.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossCurve {
    pub losses: Vec<f64>,
    pub seconds: Vec<f64>,
}

impl LossCurve {
    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    /// CSV `epoch,loss,seconds`. Without `timings` the seconds column is 0
    /// so that repeated runs give identical files.
    pub fn to_csv(&self, timings: bool) -> String {
        let mut s = String::from("epoch,loss,seconds\n");
        for (i, loss) in self.losses.iter().enumerate() {
            let secs = if timings { self.seconds.get(i).copied().unwrap_or(0.0) } else { 0.0 };
            s.push_str(&format!("{},{},{}\n", i + 1, loss, secs));
        }
        s
    }
}

/// Anything the training loop can optimize.
pub trait Trainable {
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
    /// Scalar objective for reconstructing `target` from `input`.
    fn batch_loss(
        &self,
        tape: &mut Tape,
        p: &Bindings,
        input: &ImageBatch,
        target: &ImageBatch,
        objective: Objective,
    ) -> Result<Var>;
}

impl Trainable for TransformerDR {
    fn params(&self) -> &ParamSet {
        TransformerDR::params(self)
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        TransformerDR::params_mut(self)
    }

    fn batch_loss(
        &self,
        tape: &mut Tape,
        p: &Bindings,
        input: &ImageBatch,
        target: &ImageBatch,
        objective: Objective,
    ) -> Result<Var> {
        match objective {
            Objective::Mse => TransformerDR::batch_loss(self, tape, p, input, target, None),
            Objective::Joint { lambda, margin, scale } => {
                let head = self
                    .head()
                    .ok_or_else(|| Error::Config("joint objective needs a class head".into()))?;
                if head.margin != margin || head.scale != scale {
                    return Err(Error::Config(format!(
                        "objective margin/scale ({margin}, {scale}) differ from the head's ({}, {})",
                        head.margin, head.scale
                    )));
                }
                TransformerDR::batch_loss(self, tape, p, input, target, Some(lambda))
            }
        }
    }
}

impl Trainable for AeModel {
    fn params(&self) -> &ParamSet {
        AeModel::params(self)
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        AeModel::params_mut(self)
    }

    fn batch_loss(
        &self,
        tape: &mut Tape,
        p: &Bindings,
        input: &ImageBatch,
        target: &ImageBatch,
        objective: Objective,
    ) -> Result<Var> {
        if objective != Objective::Mse {
            return Err(Error::Config("the autoencoder supports only the MSE objective".into()));
        }
        let x = tape.constant(input.flat());
        let t = tape.constant(target.flat());
        let (_, recon) = self.forward(tape, p, x)?;
        reconstruction_loss(tape, t, recon, input.n())
    }
}

/// Mixes seed components into one stream seed (splitmix64 finalizer).
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x9E37_79B9_7F4A_7C15u64, |acc, &p| {
        let mut z = acc ^ p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(acc << 6);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    })
}

/// Optimizer plus progress; everything needed to resume exactly.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub adam: Adam,
    pub epochs_done: usize,
    pub curve: LossCurve,
}

impl Trainer {
    pub fn new(config: TrainConfig, params: &ParamSet) -> Result<Self> {
        config.validate()?;
        Ok(Trainer {
            adam: Adam::new(config.adam, params)?,
            config,
            epochs_done: 0,
            curve: LossCurve::default(),
        })
    }

    /// Order in which images are visited during `epoch` (0-based).
    pub fn epoch_order(&self, epoch: usize, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut seeded_rng(derive_seed(&[self.config.seed, epoch as u64])));
        idx
    }

    /// Runs the remaining `config.epochs − epochs_done` epochs.
    pub fn train<M: Trainable>(&mut self, model: &mut M, data: &ImageBatch) -> Result<&LossCurve> {
        let left = self.config.epochs.saturating_sub(self.epochs_done);
        self.train_epochs(model, data, left, |_, _, _| {})?;
        Ok(&self.curve)
    }

    /// Runs `epochs` more epochs, calling `report(epoch, loss, seconds)`
    /// after each.
    pub fn train_epochs<M: Trainable>(
        &mut self,
        model: &mut M,
        data: &ImageBatch,
        epochs: usize,
        mut report: impl FnMut(usize, f64, f64),
    ) -> Result<()> {
        if data.n() == 0 {
            return Err(Error::Config("empty training set".into()));
        }
        if precision() != self.config.precision {
            return Err(Error::Config(format!(
                "global precision is {:?} but the run was configured for {:?}",
                precision(),
                self.config.precision
            )));
        }
        for _ in 0..epochs {
            let epoch = self.epochs_done;
            let start = Instant::now();
            let order = self.epoch_order(epoch, data.n());
            let mut total = 0.0;
            for (b, idx) in order.chunks(self.config.batch_size).enumerate() {
                let target = data.select(idx);
                let input = match self.config.masking {
                    None => target.clone(),
                    Some(m) => {
                        let spec = MaskSpec::new(m.ratio, derive_seed(&[self.config.seed, epoch as u64, b as u64]))?;
                        mask_images(&target, m.grid, &spec)?
                    }
                };
                let mut tape = Tape::new();
                let p = model.params().bind(&mut tape);
                let loss = model.batch_loss(&mut tape, &p, &input, &target, self.config.objective)?;
                let value = tape.value(loss).item();
                if !value.is_finite() {
                    return Err(Error::Numeric(format!("loss became {value} in epoch {} batch {b}", epoch + 1)));
                }
                tape.backward(loss)?;
                let params = model.params_mut();
                params.zero_grads();
                params.accumulate_grads(&tape, &p);
                self.adam.step(params)?;
                total += value * idx.len() as f64;
            }
            let mean = total / data.n() as f64;
            let secs = start.elapsed().as_secs_f64();
            self.curve.losses.push(mean);
            self.curve.seconds.push(secs);
            self.epochs_done += 1;
            report(self.epochs_done, mean, secs);
        }
        Ok(())
    }
}
