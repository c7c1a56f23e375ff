use super::params::{Bindings, ParamId, ParamSet};
use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub dim: usize,
    pub eps: f64,
}

impl LayerNorm {
    /// Unit gain, zero bias.
    pub fn new(params: &mut ParamSet, name: &str, dim: usize) -> Self {
        LayerNorm {
            gain: params.add(format!("{name}.gain"), Tensor::full(&[dim], 1.0)),
            bias: params.add(format!("{name}.bias"), Tensor::zeros(&[dim])),
            dim,
            eps: LAYER_NORM_EPS,
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bindings, x: Var) -> Result<Var> {
        tape.layer_norm(x, p[self.gain], p[self.bias], self.eps)
    }
}
