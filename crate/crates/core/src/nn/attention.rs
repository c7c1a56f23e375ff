use rand::Rng;

use super::linear::Linear;
use super::params::{Bindings, ParamSet};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

/// Multi-head scaled dot-product self-attention across the patches of
/// each image.
///
/// Inputs are `[images·patches × d_model]` with each image's patches in
/// consecutive rows. Head `h` uses columns `h·d_head..(h+1)·d_head` of the
/// query, key and value projections; the heads are concatenated and passed
/// through the output projection.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub n_heads: usize,
    pub d_model: usize,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

impl MultiHeadAttention {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        d_model: usize,
        n_heads: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if n_heads == 0 || d_model % n_heads != 0 {
            return Err(Error::Config(format!(
                "{n_heads} heads do not divide d_model = {d_model}"
            )));
        }
        Ok(MultiHeadAttention {
            n_heads,
            d_model,
            query: Linear::new(params, &format!("{name}.q"), d_model, d_model, rng),
            key: Linear::new(params, &format!("{name}.k"), d_model, d_model, rng),
            value: Linear::new(params, &format!("{name}.v"), d_model, d_model, rng),
            output: Linear::new(params, &format!("{name}.o"), d_model, d_model, rng),
        })
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bindings, x: Var, patches: usize) -> Result<Var> {
        self.forward_with_weights(tape, p, x, patches).map(|(y, _)| y)
    }

    /// Also returns each head's `[images × patches × patches]` attention weights.
    pub fn forward_with_weights(
        &self,
        tape: &mut Tape,
        p: &Bindings,
        x: Var,
        patches: usize,
    ) -> Result<(Var, Vec<Var>)> {
        let s = tape.shape(x).to_vec();
        if s.len() != 2 || s[1] != self.d_model {
            return Err(Error::dim("attention", &s, &[patches, self.d_model]));
        }
        if patches == 0 || s[0] % patches != 0 {
            return Err(Error::Shape(format!(
                "{} rows do not split into images of {patches} patches",
                s[0]
            )));
        }
        let images = s[0] / patches;
        let dh = self.d_head();
        let scale = 1.0 / (dh as f64).sqrt();

        let q = self.query.forward(tape, p, x)?;
        let k = self.key.forward(tape, p, x)?;
        let v = self.value.forward(tape, p, x)?;

        let mut heads = Vec::with_capacity(self.n_heads);
        let mut weights = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let cols = (h * dh, (h + 1) * dh);
            let per_image = |tape: &mut Tape, t: Var| -> Result<Var> {
                let t = if self.n_heads == 1 {
                    t
                } else {
                    tape.slice_cols(t, cols.0, cols.1)?
                };
                tape.reshape(t, &[images, patches, dh])
            };
            let qh = per_image(tape, q)?;
            let kh = per_image(tape, k)?;
            let vh = per_image(tape, v)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.batch_matmul(qh, kt)?;
            let scores = tape.scale(scores, scale);
            let attn = tape.softmax_rows(scores);
            let mixed = tape.batch_matmul(attn, vh)?;
            heads.push(tape.reshape(mixed, &[images * patches, dh])?);
            weights.push(attn);
        }
        let joined = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat_cols(&heads)?
        };
        Ok((self.output.forward(tape, p, joined)?, weights))
    }
}
