use crate::autodiff::{Tape, Var};
use crate::data::ImageBatch;
use crate::error::{Error, Result};
use crate::nn::{seeded_rng, Bindings, Linear, ParamSet};
use crate::tensor::Tensor;

const INFERENCE_CHUNK: usize = 512;

/// Fully-connected autoencoder with a mirrored decoder, e.g.
/// 784-512-256-128-64-32-64-128-256-512-784.
///
/// Hidden layers use GELU; the code layer and the output layer are linear.
#[derive(Clone, Debug)]
pub struct AeModel {
    widths: Vec<usize>,
    image_shape: (usize, usize, usize),
    params: ParamSet,
    encoder: Vec<Linear>,
    decoder: Vec<Linear>,
}

impl AeModel {
    /// Autoencoder on flat `[1 × widths[0] × 1]` inputs.
    pub fn new(widths: &[usize], seed: u64) -> Result<Self> {
        let d = *widths
            .first()
            .ok_or_else(|| Error::Config("empty layer list".into()))?;
        Self::for_images((1, d, 1), widths, seed)
    }

    pub fn for_images(image_shape: (usize, usize, usize), widths: &[usize], seed: u64) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Config(format!("need ≥ 2 positive layer widths, got {widths:?}")));
        }
        if let Some(w) = widths.windows(2).find(|w| w[1] >= w[0]) {
            return Err(Error::Config(format!(
                "layer widths must strictly decrease, found {} → {}",
                w[0], w[1]
            )));
        }
        let (h, w, c) = image_shape;
        if h * w * c != widths[0] {
            return Err(Error::Config(format!(
                "input width {} does not match {h}x{w}x{c} images",
                widths[0]
            )));
        }
        let mut rng = seeded_rng(seed);
        let mut params = ParamSet::new();
        let encoder = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(&mut params, &format!("enc{i}"), w[0], w[1], &mut rng))
            .collect();
        let decoder = widths
            .windows(2)
            .rev()
            .enumerate()
            .map(|(i, w)| Linear::new(&mut params, &format!("dec{i}"), w[1], w[0], &mut rng))
            .collect();
        Ok(AeModel {
            widths: widths.to_vec(),
            image_shape,
            params,
            encoder,
            decoder,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn image_shape(&self) -> (usize, usize, usize) {
        self.image_shape
    }

    pub fn code_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn encoder(&self) -> &[Linear] {
        &self.encoder
    }

    pub fn decoder(&self) -> &[Linear] {
        &self.decoder
    }

    fn stack(layers: &[Linear], tape: &mut Tape, p: &Bindings, mut h: Var) -> Result<Var> {
        for (i, layer) in layers.iter().enumerate() {
            h = layer.forward(tape, p, h)?;
            if i + 1 < layers.len() {
                h = tape.gelu(h);
            }
        }
        Ok(h)
    }

    pub fn encode_vars(&self, tape: &mut Tape, p: &Bindings, x: Var) -> Result<Var> {
        Self::stack(&self.encoder, tape, p, x)
    }

    pub fn decode_vars(&self, tape: &mut Tape, p: &Bindings, code: Var) -> Result<Var> {
        Self::stack(&self.decoder, tape, p, code)
    }

    /// `[n × d]` input → (`[n × code]`, `[n × d]` reconstruction).
    pub fn forward(&self, tape: &mut Tape, p: &Bindings, x: Var) -> Result<(Var, Var)> {
        let code = self.encode_vars(tape, p, x)?;
        let recon = self.decode_vars(tape, p, code)?;
        Ok((code, recon))
    }

    fn check_batch(&self, batch: &ImageBatch) -> Result<()> {
        let got = (batch.height(), batch.width(), batch.channels());
        if got != self.image_shape {
            return Err(Error::dim(
                "autoencoder input",
                &[got.0, got.1, got.2],
                &[self.image_shape.0, self.image_shape.1, self.image_shape.2],
            ));
        }
        Ok(())
    }

    fn run_chunked(&self, x: &Tensor, out_dim: usize, f: impl Fn(&Self, &mut Tape, &Bindings, Var) -> Result<Var>) -> Result<Tensor> {
        let (n, d) = (x.rows(), x.cols());
        let mut out = Vec::with_capacity(n * out_dim);
        for start in (0..n).step_by(INFERENCE_CHUNK) {
            let m = INFERENCE_CHUNK.min(n - start);
            let chunk = Tensor::new(&[m, d], x.data()[start * d..(start + m) * d].to_vec())?;
            let mut tape = Tape::new();
            let p = self.params.bind_frozen(&mut tape);
            let v = tape.constant(chunk);
            let y = f(self, &mut tape, &p, v)?;
            out.extend_from_slice(tape.value(y).data());
        }
        Tensor::new(&[n, out_dim], out)
    }

    pub fn encode(&self, batch: &ImageBatch) -> Result<Tensor> {
        self.check_batch(batch)?;
        self.run_chunked(&batch.flat(), self.code_dim(), |m, t, p, x| m.encode_vars(t, p, x))
    }

    pub fn decode(&self, codes: &Tensor) -> Result<ImageBatch> {
        if codes.rank() != 2 || codes.cols() != self.code_dim() {
            return Err(Error::dim("autoencoder decode", codes.shape(), &[codes.rows(), self.code_dim()]));
        }
        let out = self.run_chunked(codes, self.input_dim(), |m, t, p, x| m.decode_vars(t, p, x))?;
        let (h, w, c) = self.image_shape;
        ImageBatch::from_flat_unchecked(out.into_data(), codes.rows(), h, w, c, None)
    }

    pub fn reconstruct(&self, batch: &ImageBatch) -> Result<ImageBatch> {
        self.decode(&self.encode(batch)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn code_widths_follow_schedule() {
        let ae = AeModel::for_images((28, 28, 1), &[784, 512, 256, 128, 64, 32], 0).unwrap();
        assert_eq!(ae.code_dim(), 32);
        assert_eq!(ae.encoder().len(), 5);
        let dec: Vec<_> = ae.decoder().iter().map(|l| (l.d_in, l.d_out)).collect();
        assert_eq!(dec, vec![(32, 64), (64, 128), (128, 256), (256, 512), (512, 784)]);
        let vis = AeModel::for_images((28, 28, 1), &[784, 512, 256, 128, 64, 2], 0).unwrap();
        assert_eq!(vis.code_dim(), 2);
    }

    #[test]
    fn rejects_bad_schedules() {
        assert!(AeModel::new(&[8], 0).is_err());
        assert!(AeModel::new(&[8, 9], 0).is_err());
        assert!(AeModel::for_images((2, 2, 1), &[8, 4], 0).is_err());
    }

    #[test]
    fn forward_shapes() {
        let ae = AeModel::new(&[6, 4, 2], 1).unwrap();
        let mut tape = Tape::new();
        let p = ae.params().bind(&mut tape);
        let x = tape.constant(Tensor::full(&[3, 6], 0.5));
        let (code, recon) = ae.forward(&mut tape, &p, x).unwrap();
        assert_eq!(tape.shape(code), &[3, 2]);
        assert_eq!(tape.shape(recon), &[3, 6]);
    }
}
