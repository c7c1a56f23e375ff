//! Optimization loop, checkpoints and the saved-model wrapper.

mod adam;
mod checkpoint;
mod trainer;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Checkpoint, OptimizerState, MAGIC, VERSION};
pub use trainer::{derive_seed, LossCurve, Masking, Objective, Trainable, TrainConfig, Trainer};

use std::path::Path;

use crate::baselines::{AeModel, PcaModel};
use crate::data::ImageBatch;
use crate::error::{Error, Result};
use crate::model::{parse_dims, ModelConfig, TransformerDR};
use crate::nn::{NormPlacement, ParamSet};
use crate::tensor::Tensor;

/// Any model the CLI can save, load, encode and decode with.
#[derive(Clone, Debug)]
pub enum Model {
    TransformerDr(TransformerDR),
    Ae(AeModel),
    Pca {
        model: PcaModel,
        image_shape: (usize, usize, usize),
    },
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::TransformerDr(m) if m.head().is_some() => "transformer-drr",
            Model::TransformerDr(_) => "transformer-dr",
            Model::Ae(_) => "ae",
            Model::Pca { .. } => "pca",
        }
    }

    pub fn code_dim(&self) -> usize {
        match self {
            Model::TransformerDr(m) => m.config().code_dim(),
            Model::Ae(m) => m.code_dim(),
            Model::Pca { model, .. } => model.k(),
        }
    }

    pub fn image_shape(&self) -> (usize, usize, usize) {
        match self {
            Model::TransformerDr(m) => {
                let c = m.config();
                (c.image_h, c.image_w, c.channels)
            }
            Model::Ae(m) => m.image_shape(),
            Model::Pca { image_shape, .. } => *image_shape,
        }
    }

    pub fn params(&self) -> Option<&ParamSet> {
        match self {
            Model::TransformerDr(m) => Some(m.params()),
            Model::Ae(m) => Some(m.params()),
            Model::Pca { .. } => None,
        }
    }

    fn check_shape(&self, batch: &ImageBatch) -> Result<()> {
        let (h, w, c) = self.image_shape();
        let got = [batch.height(), batch.width(), batch.channels()];
        if got != [h, w, c] {
            return Err(Error::dim("image shape", &got, &[h, w, c]));
        }
        Ok(())
    }

    /// `[n × code_dim]`
    pub fn encode(&self, batch: &ImageBatch) -> Result<Tensor> {
        self.check_shape(batch)?;
        match self {
            Model::TransformerDr(m) => m.encode(batch),
            Model::Ae(m) => m.encode(batch),
            Model::Pca { model, .. } => model.encode(&batch.flat()),
        }
    }

    pub fn decode(&self, codes: &Tensor) -> Result<ImageBatch> {
        match self {
            Model::TransformerDr(m) => m.decode(codes),
            Model::Ae(m) => m.decode(codes),
            Model::Pca { model, image_shape } => {
                let flat = model.decode(codes)?;
                let (h, w, c) = *image_shape;
                ImageBatch::from_flat_unchecked(flat.into_data(), codes.rows(), h, w, c, None)
            }
        }
    }

    pub fn reconstruct(&self, batch: &ImageBatch) -> Result<ImageBatch> {
        self.decode(&self.encode(batch)?)
    }

    fn config_pairs(&self) -> Vec<(String, String)> {
        let (h, w, c) = self.image_shape();
        let mut v = vec![
            ("model".to_string(), self.kind().to_string()),
            ("model.image_h".into(), h.to_string()),
            ("model.image_w".into(), w.to_string()),
            ("model.channels".into(), c.to_string()),
        ];
        match self {
            Model::TransformerDr(m) => {
                let cfg = m.config();
                v.push(("model.grid".into(), cfg.grid().to_string()));
                v.push(("model.stages".into(), join(&cfg.stage_dims)));
                v.push(("model.seed".into(), cfg.seed.to_string()));
                v.push(("model.norm".into(), cfg.norm.to_string()));
                if let Some(head) = m.head() {
                    v.push(("head.classes".into(), head.classes.to_string()));
                    v.push(("head.margin".into(), head.margin.to_string()));
                    v.push(("head.scale".into(), head.scale.to_string()));
                }
            }
            Model::Ae(m) => v.push(("model.widths".into(), join(m.widths()))),
            Model::Pca { model, .. } => v.push(("model.k".into(), model.k().to_string())),
        }
        v
    }

    /// Packs the model and, when given, the trainer state.
    pub fn to_checkpoint(&self, trainer: Option<&Trainer>) -> Checkpoint {
        let mut config = self.config_pairs();
        let tensors = match self {
            Model::Pca { model, .. } => vec![
                ("mean".to_string(), model.mean.clone()),
                ("components".into(), model.components.clone()),
                (
                    "variances".into(),
                    Tensor::new(&[model.variances.len()], model.variances.clone()).expect("k ≥ 1"),
                ),
            ],
            _ => self
                .params()
                .unwrap()
                .iter()
                .map(|(n, t)| (n.to_string(), t.detached()))
                .collect(),
        };
        let mut ck = Checkpoint {
            config: Vec::new(),
            tensors,
            optimizer: None,
            rng_seed: 0,
            epochs_done: 0,
            losses: Vec::new(),
        };
        if let Some(t) = trainer {
            config.extend(t.config.to_pairs());
            ck.optimizer = Some(OptimizerState {
                step: t.adam.steps(),
                m: t.adam.first_moments().to_vec(),
                v: t.adam.second_moments().to_vec(),
            });
            ck.rng_seed = t.config.seed;
            ck.epochs_done = t.epochs_done as u64;
            ck.losses = t.curve.losses.clone();
        }
        ck.config = config;
        ck
    }

    /// Rebuilds the model (and trainer, if the checkpoint holds one).
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Model, Option<Trainer>)> {
        let need = |k: &str| {
            ck.get(k)
                .ok_or_else(|| Error::Checkpoint(format!("missing key {k}")))
        };
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Checkpoint(format!("bad value {v:?} for {k}")))
        }
        let h: usize = num("model.image_h", need("model.image_h")?)?;
        let w: usize = num("model.image_w", need("model.image_w")?)?;
        let c: usize = num("model.channels", need("model.channels")?)?;
        let kind = need("model")?;
        let mut model = match kind {
            "transformer-dr" | "transformer-drr" => {
                let grid = num("model.grid", need("model.grid")?)?;
                let stages = parse_dims(need("model.stages")?)?;
                let seed = num("model.seed", need("model.seed")?)?;
                let norm = match ck.get("model.norm") {
                    Some(v) => v.parse()?,
                    None => NormPlacement::Post,
                };
                let mut cfg = ModelConfig::for_images(h, w, grid, stages, seed)?.with_norm(norm);
                cfg.channels = c;
                cfg.validate()?;
                let mut m = TransformerDR::build_symmetric(cfg, seed)?;
                if kind == "transformer-drr" {
                    m = m.with_class_head(
                        num("head.classes", need("head.classes")?)?,
                        num("head.margin", need("head.margin")?)?,
                        num("head.scale", need("head.scale")?)?,
                        seed,
                    );
                }
                Model::TransformerDr(m)
            }
            "ae" => {
                let widths = parse_dims(need("model.widths")?)?;
                Model::Ae(AeModel::for_images((h, w, c), &widths, 0)?)
            }
            "pca" => {
                let find = |name: &str| {
                    ck.tensors
                        .iter()
                        .find(|(n, _)| n == name)
                        .map(|(_, t)| t.clone())
                        .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
                };
                let (mean, components, variances) = (find("mean")?, find("components")?, find("variances")?);
                let k: usize = num("model.k", need("model.k")?)?;
                if components.rank() != 2
                    || components.shape() != [mean.len(), k]
                    || variances.len() != k
                    || mean.len() != h * w * c
                {
                    return Err(Error::Checkpoint("inconsistent PCA tensors".into()));
                }
                return Ok((
                    Model::Pca {
                        model: PcaModel {
                            mean,
                            components,
                            variances: variances.into_data(),
                        },
                        image_shape: (h, w, c),
                    },
                    None,
                ));
            }
            other => return Err(Error::Checkpoint(format!("unknown model kind {other:?}"))),
        };
        let params = match &mut model {
            Model::TransformerDr(m) => m.params_mut(),
            Model::Ae(m) => m.params_mut(),
            Model::Pca { .. } => unreachable!(),
        };
        if params.len() != ck.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "model has {} parameters, checkpoint has {}",
                params.len(),
                ck.tensors.len()
            )));
        }
        for (name, t) in &ck.tensors {
            params.assign(name, t)?;
        }
        let trainer = match &ck.optimizer {
            None => None,
            Some(o) => {
                let config = TrainConfig::from_pairs(&ck.config)?;
                let shapes_ok = o.m.len() == params.len()
                    && params.iter().zip(&o.m).all(|((_, t), m)| t.len() == m.len());
                if !shapes_ok {
                    return Err(Error::Checkpoint("optimizer state does not match parameters".into()));
                }
                if ck.losses.len() as u64 != ck.epochs_done || ck.rng_seed != config.seed {
                    return Err(Error::Checkpoint("inconsistent training state".into()));
                }
                Some(Trainer {
                    adam: Adam::from_state(config.adam, o.step, o.m.clone(), o.v.clone())?,
                    epochs_done: ck.epochs_done as usize,
                    curve: LossCurve {
                        losses: ck.losses.clone(),
                        seconds: vec![0.0; ck.losses.len()],
                    },
                    config,
                })
            }
        };
        Ok((model, trainer))
    }

    pub fn save(&self, trainer: Option<&Trainer>, path: &Path) -> Result<()> {
        self.to_checkpoint(trainer).save(path)
    }

    pub fn load(path: &Path) -> Result<(Model, Option<Trainer>)> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

fn join(dims: &[usize]) -> String {
    dims.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}
