use std::fmt;
use std::str::FromStr;

use rand::Rng;

use super::attention::MultiHeadAttention;
use super::feedforward::FeedForward;
use super::heads_for;
use super::norm::LayerNorm;
use super::params::{Bindings, ParamSet};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

/// Where the first layer norm sits relative to the attention residual.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NormPlacement {
    /// `h = LN1(x + MHA(x))`
    #[default]
    Post,
    /// `h = x + MHA(LN1(x))`
    Pre,
}

impl NormPlacement {
    pub fn name(self) -> &'static str {
        match self {
            NormPlacement::Post => "post",
            NormPlacement::Pre => "pre",
        }
    }
}

impl fmt::Display for NormPlacement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NormPlacement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "post" => Ok(NormPlacement::Post),
            "pre" => Ok(NormPlacement::Pre),
            _ => Err(Error::Config(format!("norm placement must be post or pre, got {s:?}"))),
        }
    }
}

/// One encoder or decoder stage, mapping `[patches × d_in]` to
/// `[patches × d_out]`:
///
/// ```text
/// h = LN1(x + MHA(x))        (post, default)
/// h = x + MHA(LN1(x))        (pre)
/// y = FFN(LN2(h))
/// ```
///
/// The residual wraps attention only because the feed-forward changes width.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub attn: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub norm2: LayerNorm,
    pub ffn: FeedForward,
    pub placement: NormPlacement,
}

impl TransformerBlock {
    /// Block with the default head count and `d_hidden = 2·d_in`.
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Self::with_shape(params, name, d_in, heads_for(d_in), 2 * d_in, d_out, rng)
    }

    pub fn with_shape(
        params: &mut ParamSet,
        name: &str,
        d_in: usize,
        n_heads: usize,
        d_hidden: usize,
        d_out: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if d_in == 0 || d_out == 0 || d_hidden == 0 {
            return Err(Error::Config(format!(
                "block {name}: zero width ({d_in}→{d_hidden}→{d_out})"
            )));
        }
        let attn = MultiHeadAttention::new(params, &format!("{name}.attn"), d_in, n_heads, rng)?;
        let norm1 = LayerNorm::new(params, &format!("{name}.norm1"), d_in);
        let norm2 = LayerNorm::new(params, &format!("{name}.norm2"), d_in);
        let ffn = FeedForward::new(params, &format!("{name}.ffn"), d_in, d_hidden, d_out, rng);
        Ok(TransformerBlock {
            attn,
            norm1,
            norm2,
            ffn,
            placement: NormPlacement::Post,
        })
    }

    pub fn with_placement(mut self, placement: NormPlacement) -> Self {
        self.placement = placement;
        self
    }

    pub fn d_in(&self) -> usize {
        self.attn.d_model
    }

    pub fn d_out(&self) -> usize {
        self.ffn.d_output()
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bindings, x: Var, patches: usize) -> Result<Var> {
        let h = match self.placement {
            NormPlacement::Post => {
                let a = self.attn.forward(tape, p, x, patches)?;
                let h = tape.add(x, a)?;
                self.norm1.forward(tape, p, h)?
            }
            NormPlacement::Pre => {
                let n = self.norm1.forward(tape, p, x)?;
                let a = self.attn.forward(tape, p, n, patches)?;
                tape.add(x, a)?
            }
        };
        let h = self.norm2.forward(tape, p, h)?;
        self.ffn.forward(tape, p, h)
    }
}
