use rand::Rng;

use super::linear::Linear;
use super::params::{Bindings, ParamSet};
use crate::autodiff::{Tape, Var};
use crate::error::Result;

/// Per-patch two-layer network `GELU(x·W1 + b1)·W2 + b2`.
///
/// Unlike a standard Transformer feed-forward, `d_output` differs from
/// `d_input`: encoder blocks shrink the width and decoder blocks grow it.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub first: Linear,
    pub second: Linear,
}

impl FeedForward {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        d_input: usize,
        d_hidden: usize,
        d_output: usize,
        rng: &mut impl Rng,
    ) -> Self {
        FeedForward {
            first: Linear::new(params, &format!("{name}.fc1"), d_input, d_hidden, rng),
            second: Linear::new(params, &format!("{name}.fc2"), d_hidden, d_output, rng),
        }
    }

    pub fn d_input(&self) -> usize {
        self.first.d_in
    }

    pub fn d_hidden(&self) -> usize {
        self.first.d_out
    }

    pub fn d_output(&self) -> usize {
        self.second.d_out
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bindings, x: Var) -> Result<Var> {
        let h = self.first.forward(tape, p, x)?;
        let h = tape.gelu(h);
        self.second.forward(tape, p, h)
    }
}
