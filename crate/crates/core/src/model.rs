//! The symmetric dimension-reducing encoder/decoder and its objectives.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::data::{patchify, unpatchify, Grid, ImageBatch};
use crate::error::{Error, Result};
use crate::nn::{
    heads_for, seeded_rng, xavier_uniform, Bindings, NormPlacement, ParamId, ParamSet,
    TransformerBlock,
};
use crate::tensor::Tensor;

/// Images per tape during inference.
const INFERENCE_CHUNK: usize = 256;

/// Patch grid plus the per-patch width of every encoder stage.
///
/// `stage_dims = [d0, d1, …, dL]` is strictly decreasing and `d0` equals the
/// flattened patch size, so an image of `P` patches is coded into `P·dL`
/// values.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub image_h: usize,
    pub image_w: usize,
    pub channels: usize,
    pub patch_rows: usize,
    pub patch_cols: usize,
    pub stage_dims: Vec<usize>,
    pub seed: u64,
    pub norm: NormPlacement,
}

impl ModelConfig {
    pub fn new(
        image_h: usize,
        image_w: usize,
        channels: usize,
        patch_rows: usize,
        patch_cols: usize,
        stage_dims: Vec<usize>,
        seed: u64,
    ) -> Result<Self> {
        let c = ModelConfig {
            image_h,
            image_w,
            channels,
            patch_rows,
            patch_cols,
            stage_dims,
            seed,
            norm: NormPlacement::Post,
        };
        c.validate()?;
        Ok(c)
    }

    /// Config for single-channel images from a grid and stage list.
    pub fn for_images(h: usize, w: usize, grid: Grid, stage_dims: Vec<usize>, seed: u64) -> Result<Self> {
        Self::new(h, w, 1, grid.rows, grid.cols, stage_dims, seed)
    }

    pub fn with_norm(mut self, norm: NormPlacement) -> Self {
        self.norm = norm;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if [self.image_h, self.image_w, self.channels, self.patch_rows, self.patch_cols].contains(&0) {
            return bad("image and grid extents must be positive".into());
        }
        if self.image_h % self.patch_rows != 0 || self.image_w % self.patch_cols != 0 {
            return bad(format!(
                "{}x{} image does not split into a {}x{} grid",
                self.image_h, self.image_w, self.patch_rows, self.patch_cols
            ));
        }
        if self.stage_dims.len() < 2 {
            return bad("need at least two stage dimensions".into());
        }
        if self.stage_dims.contains(&0) {
            return bad("stage dimensions must be positive".into());
        }
        if let Some(w) = self.stage_dims.windows(2).find(|w| w[1] >= w[0]) {
            return bad(format!(
                "stage dimensions must strictly decrease, found {} → {}",
                w[0], w[1]
            ));
        }
        let d0 = self.patch_len();
        if self.stage_dims[0] != d0 {
            return bad(format!(
                "first stage is {} but a {}x{}x{} patch holds {d0} values",
                self.stage_dims[0],
                self.image_h / self.patch_rows,
                self.image_w / self.patch_cols,
                self.channels
            ));
        }
        Ok(())
    }

    pub fn grid(&self) -> Grid {
        Grid::new(self.patch_rows, self.patch_cols)
    }

    pub fn patches(&self) -> usize {
        self.patch_rows * self.patch_cols
    }

    /// Values per flattened patch.
    pub fn patch_len(&self) -> usize {
        (self.image_h / self.patch_rows) * (self.image_w / self.patch_cols) * self.channels
    }

    pub fn input_dim(&self) -> usize {
        self.image_h * self.image_w * self.channels
    }

    pub fn code_width(&self) -> usize {
        *self.stage_dims.last().unwrap()
    }

    /// Values per coded image, `P·dL`.
    pub fn code_dim(&self) -> usize {
        self.patches() * self.code_width()
    }

    /// Attention heads of each encoder stage.
    pub fn heads_per_stage(&self) -> Vec<usize> {
        self.stage_dims[..self.stage_dims.len() - 1]
            .iter()
            .map(|&d| heads_for(d))
            .collect()
    }

    /// `(d_in, d_out)` of each encoder block.
    pub fn encoder_stages(&self) -> Vec<(usize, usize)> {
        self.stage_dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// `(d_in, d_out)` of each decoder block: the encoder stages reversed and
    /// flipped.
    pub fn decoder_stages(&self) -> Vec<(usize, usize)> {
        self.encoder_stages().into_iter().rev().map(|(a, b)| (b, a)).collect()
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let dims: Vec<String> = self.stage_dims.iter().map(usize::to_string).collect();
        vec![
            ("image_h".into(), self.image_h.to_string()),
            ("image_w".into(), self.image_w.to_string()),
            ("channels".into(), self.channels.to_string()),
            ("grid".into(), self.grid().to_string()),
            ("stages".into(), dims.join(",")),
            ("seed".into(), self.seed.to_string()),
            ("norm".into(), self.norm.to_string()),
        ]
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let get = |k: &str| {
            pairs
                .iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Config(format!("missing model key {k}")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Config(format!("bad value for {k}")))
        };
        let grid: Grid = get("grid")?.parse()?;
        let norm = match get("norm") {
            Ok(v) => v.parse()?,
            Err(_) => NormPlacement::Post,
        };
        let c = Self::new(
            num("image_h")?,
            num("image_w")?,
            num("channels")?,
            grid.rows,
            grid.cols,
            parse_dims(get("stages")?)?,
            get("seed")?
                .parse()
                .map_err(|_| Error::Config("bad seed".into()))?,
        )?;
        Ok(c.with_norm(norm))
    }
}

/// Parses a comma-separated list of positive widths.
pub fn parse_dims(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .ok()
                .filter(|&v| v > 0)
                .ok_or_else(|| Error::Config(format!("bad dimension {t:?} in {s:?}")))
        })
        .collect()
}

/// Margin-cosine classifier on top of the flattened code.
///
/// Logits are `s·(cos θ_y − m)` for the true class and `s·cos θ_j` for the
/// others, where `θ_j` is the angle between the code and class weight `j`.
#[derive(Clone, Debug)]
pub struct CosineHead {
    pub weight: ParamId,
    pub classes: usize,
    pub dim: usize,
    pub margin: f64,
    pub scale: f64,
}

impl CosineHead {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        dim: usize,
        classes: usize,
        margin: f64,
        scale: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = params.add(format!("{name}.weight"), xavier_uniform(classes, dim, rng));
        CosineHead {
            weight,
            classes,
            dim,
            margin,
            scale,
        }
    }

    /// `[n × classes]` cosine similarities.
    pub fn cosines(&self, tape: &mut Tape, p: &Bindings, code: Var) -> Result<Var> {
        let c = tape.l2_normalize_rows(code)?;
        let w = tape.l2_normalize_rows(p[self.weight])?;
        let wt = tape.transpose(w)?;
        tape.matmul(c, wt)
    }

    /// Mean margin-cosine cross-entropy over `code` rows.
    pub fn loss(&self, tape: &mut Tape, p: &Bindings, code: Var, labels: &[usize]) -> Result<Var> {
        let cos = self.cosines(tape, p, code)?;
        let mut margins = Tensor::zeros(&[labels.len(), self.classes]);
        for (i, &y) in labels.iter().enumerate() {
            if y >= self.classes {
                return Err(Error::Contract(format!("label {y} ≥ {} classes", self.classes)));
            }
            margins.data_mut()[i * self.classes + y] = self.margin;
        }
        let m = tape.constant(margins);
        let shifted = tape.sub(cos, m)?;
        let logits = tape.scale(shifted, self.scale);
        tape.cross_entropy(logits, labels)
    }

    pub fn predict(&self, params: &ParamSet, codes: &Tensor) -> Result<Vec<usize>> {
        let mut tape = Tape::new();
        let p = params.bind_frozen(&mut tape);
        let x = tape.constant(codes.clone());
        let cos = self.cosines(&mut tape, &p, x)?;
        let v = tape.value(cos);
        Ok((0..v.rows())
            .map(|r| {
                v.row(r)
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (j, &c)| if c > best.1 { (j, c) } else { best })
                    .0
            })
            .collect())
    }
}

/// `(1/N)·Σᵢ‖xᵢ − x̂ᵢ‖²` over `images` rows-groups of `target`/`recon`.
pub fn reconstruction_loss(tape: &mut Tape, target: Var, recon: Var, images: usize) -> Result<Var> {
    if images == 0 {
        return Err(Error::Contract("empty batch".into()));
    }
    let diff = tape.sub(recon, target)?;
    let sq = tape.mul(diff, diff)?;
    let total = tape.sum(sq);
    Ok(tape.scale(total, 1.0 / images as f64))
}

/// Reconstruction loss plus `lambda` times the margin-cosine loss of `code`
/// (`[images × code_dim]`). With `lambda == 0` the reconstruction term is
/// returned unchanged.
pub fn joint_loss(
    tape: &mut Tape,
    p: &Bindings,
    head: &CosineHead,
    recon_loss: Var,
    code: Var,
    labels: &[usize],
    lambda: f64,
) -> Result<Var> {
    if !(lambda >= 0.0) {
        return Err(Error::Contract(format!("lambda must be ≥ 0, got {lambda}")));
    }
    if lambda == 0.0 {
        return Ok(recon_loss);
    }
    let ce = head.loss(tape, p, code, labels)?;
    let weighted = tape.scale(ce, lambda);
    tape.add(recon_loss, weighted)
}

/// Encoder/decoder stacks of dimension-reducing Transformer blocks.
#[derive(Clone, Debug)]
pub struct TransformerDR {
    config: ModelConfig,
    params: ParamSet,
    pos: ParamId,
    encoder: Vec<TransformerBlock>,
    decoder: Vec<TransformerBlock>,
    head: Option<CosineHead>,
}

impl TransformerDR {
    /// Encoder per `stage_dims`, decoder per the reversed dims, learned
    /// positional encodings; fully determined by `seed`.
    pub fn build_symmetric(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded_rng(seed);
        let mut params = ParamSet::new();
        let pos = params.add(
            "pos_encoding",
            xavier_uniform(config.patches(), config.stage_dims[0], &mut rng),
        );
        let encoder = config
            .encoder_stages()
            .into_iter()
            .enumerate()
            .map(|(i, (a, b))| {
                TransformerBlock::new(&mut params, &format!("enc{i}"), a, b, &mut rng)
                    .map(|blk| blk.with_placement(config.norm))
            })
            .collect::<Result<Vec<_>>>()?;
        let decoder = config
            .decoder_stages()
            .into_iter()
            .enumerate()
            .map(|(i, (a, b))| {
                TransformerBlock::new(&mut params, &format!("dec{i}"), a, b, &mut rng)
                    .map(|blk| blk.with_placement(config.norm))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TransformerDR {
            config,
            params,
            pos,
            encoder,
            decoder,
            head: None,
        })
    }

    /// Adds a margin-cosine classifier over the flattened code.
    pub fn with_class_head(mut self, classes: usize, margin: f64, scale: f64, seed: u64) -> Self {
        let mut rng = seeded_rng(seed ^ 0x6865_6164);
        let dim = self.config.code_dim();
        self.head = Some(CosineHead::new(
            &mut self.params,
            "head",
            dim,
            classes,
            margin,
            scale,
            &mut rng,
        ));
        self
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn encoder(&self) -> &[TransformerBlock] {
        &self.encoder
    }

    pub fn decoder(&self) -> &[TransformerBlock] {
        &self.decoder
    }

    pub fn head(&self) -> Option<&CosineHead> {
        self.head.as_ref()
    }

    /// `[images·P × d0]` patch rows → `[images·P × dL]` code rows.
    pub fn encode_patches(&self, tape: &mut Tape, p: &Bindings, x: Var, images: usize) -> Result<Var> {
        let want = [images * self.config.patches(), self.config.stage_dims[0]];
        if tape.shape(x) != want {
            return Err(Error::dim("encode", tape.shape(x), &want));
        }
        let pos = tape.tile_rows(p[self.pos], images)?;
        let mut h = tape.add(x, pos)?;
        for blk in &self.encoder {
            h = blk.forward(tape, p, h, self.config.patches())?;
        }
        Ok(h)
    }

    /// `[images·P × dL]` code rows → `[images·P × d0]` patch rows.
    pub fn decode_patches(&self, tape: &mut Tape, p: &Bindings, code: Var, images: usize) -> Result<Var> {
        let want = [images * self.config.patches(), self.config.code_width()];
        if tape.shape(code) != want {
            return Err(Error::dim("decode", tape.shape(code), &want));
        }
        let mut h = code;
        for blk in &self.decoder {
            h = blk.forward(tape, p, h, self.config.patches())?;
        }
        Ok(h)
    }

    fn check_batch(&self, batch: &ImageBatch) -> Result<()> {
        let c = &self.config;
        let got = [batch.height(), batch.width(), batch.channels()];
        let want = [c.image_h, c.image_w, c.channels];
        if got != want {
            return Err(Error::dim("image shape", &got, &want));
        }
        Ok(())
    }

    /// Patchified `[n·P × d0]` rows of a batch.
    pub fn patch_rows(&self, batch: &ImageBatch) -> Result<Tensor> {
        self.check_batch(batch)?;
        Ok(patchify(batch, self.config.grid())?.rows())
    }

    /// Codes as `[n × P·dL]`, one row per image.
    pub fn encode(&self, batch: &ImageBatch) -> Result<Tensor> {
        self.check_batch(batch)?;
        let mut out = Vec::with_capacity(batch.n() * self.config.code_dim());
        for start in (0..batch.n()).step_by(INFERENCE_CHUNK) {
            let idx: Vec<usize> = (start..(start + INFERENCE_CHUNK).min(batch.n())).collect();
            let rows = self.patch_rows(&batch.select(&idx))?;
            let mut tape = Tape::new();
            let p = self.params.bind_frozen(&mut tape);
            let x = tape.constant(rows);
            let code = self.encode_patches(&mut tape, &p, x, idx.len())?;
            out.extend_from_slice(tape.value(code).data());
        }
        Tensor::new(&[batch.n(), self.config.code_dim()], out)
    }

    /// Inverse of [`TransformerDR::encode`]; outputs are not clamped.
    pub fn decode(&self, codes: &Tensor) -> Result<ImageBatch> {
        let c = &self.config;
        if codes.rank() != 2 || codes.cols() != c.code_dim() {
            return Err(Error::dim("decode", codes.shape(), &[codes.rows(), c.code_dim()]));
        }
        let n = codes.rows();
        let mut out = Vec::with_capacity(n * c.input_dim());
        for start in (0..n).step_by(INFERENCE_CHUNK) {
            let m = INFERENCE_CHUNK.min(n - start);
            let chunk = Tensor::new(
                &[m * c.patches(), c.code_width()],
                codes.data()[start * c.code_dim()..(start + m) * c.code_dim()].to_vec(),
            )?;
            let mut tape = Tape::new();
            let p = self.params.bind_frozen(&mut tape);
            let x = tape.constant(chunk);
            let y = self.decode_patches(&mut tape, &p, x, m)?;
            out.extend_from_slice(tape.value(y).data());
        }
        let seq = crate::data::PatchSequence {
            values: Tensor::new(&[n, c.patches(), c.patch_len()], out)?,
            grid: c.grid(),
            image_shape: (c.image_h, c.image_w, c.channels),
        };
        unpatchify(&seq, None)
    }

    pub fn reconstruct(&self, batch: &ImageBatch) -> Result<ImageBatch> {
        self.decode(&self.encode(batch)?)
    }

    /// Class predictions from the margin-cosine head.
    pub fn classify(&self, batch: &ImageBatch) -> Result<Vec<usize>> {
        let head = self
            .head
            .as_ref()
            .ok_or_else(|| Error::Config("model has no classification head".into()))?;
        head.predict(&self.params, &self.encode(batch)?)
    }

    /// Builds the training objective for one batch: patch rows of `input`
    /// are encoded and decoded, and compared against `target`.
    pub fn batch_loss(
        &self,
        tape: &mut Tape,
        p: &Bindings,
        input: &ImageBatch,
        target: &ImageBatch,
        joint: Option<f64>,
    ) -> Result<Var> {
        let n = input.n();
        let x = tape.constant(self.patch_rows(input)?);
        let t = tape.constant(self.patch_rows(target)?);
        let code = self.encode_patches(tape, p, x, n)?;
        let recon = self.decode_patches(tape, p, code, n)?;
        let loss = reconstruction_loss(tape, t, recon, n)?;
        match joint {
            None => Ok(loss),
            Some(lambda) => {
                let head = self
                    .head
                    .as_ref()
                    .ok_or_else(|| Error::Config("joint objective needs a class head".into()))?;
                let labels: Vec<usize> = target
                    .labels()
                    .ok_or_else(|| Error::Config("joint objective needs labels".into()))?
                    .iter()
                    .map(|&l| l as usize)
                    .collect();
                let flat = tape.reshape(code, &[n, self.config.code_dim()])?;
                joint_loss(tape, p, head, loss, flat, &labels, lambda)
            }
        }
    }
}
