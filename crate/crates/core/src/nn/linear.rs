use rand::Rng;

use super::init::xavier_uniform;
use super::params::{Bindings, ParamId, ParamSet};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `y = x·W + b` applied to every trailing row of `x`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = params.add(format!("{name}.weight"), xavier_uniform(d_in, d_out, rng));
        let bias = params.add(format!("{name}.bias"), Tensor::zeros(&[d_out]));
        Linear {
            weight,
            bias,
            d_in,
            d_out,
        }
    }

    /// `x` must be `[rows × d_in]`.
    pub fn forward(&self, tape: &mut Tape, p: &Bindings, x: Var) -> Result<Var> {
        let s = tape.shape(x);
        if s.len() != 2 || s[1] != self.d_in {
            return Err(Error::dim("linear", s, &[self.d_in, self.d_out]));
        }
        let xw = tape.matmul(x, p[self.weight])?;
        tape.add_bias(xw, p[self.bias])
    }
}
