//! Finite-difference gradient oracle and the per-layer gradient check suite.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{OpKind, Tape, Var};
use crate::baselines::AeModel;
use crate::error::{Error, Result};
use crate::model::{CosineHead, ModelConfig, TransformerDR};
use crate::nn::{
    seeded_rng, Bindings, LayerNorm, Linear, MultiHeadAttention, NormPlacement, ParamSet,
    TransformerBlock,
};
use crate::tensor::{precision, Precision, Tensor};

/// Central-difference estimate of ∇f at `x`, one coordinate at a time.
pub fn finite_diff_grad<F>(mut f: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::Contract(format!("step must be positive, got {h}")));
    }
    let mut probe = x.detached();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite evaluation at coordinate {i}: f(+h) = {up}, f(-h) = {down}"
            )));
        }
        grad.push((up - down) / (2.0 * h));
    }
    Tensor::new(x.shape(), grad)
}

/// Denominator floor for [`relative_error`]. Some gradients are exactly zero
/// (e.g. the key bias under softmax's shift invariance), where central
/// differences return only rounding noise of order 1e-11.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// `max|a − b| / max(max|a|, max|b|, RELATIVE_FLOOR)`, the max-norm
/// relative error.
///
/// Normalizing by the largest magnitude rather than per entry keeps
/// near-zero coordinates from dominating.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let scale = a.iter().chain(b).map(|v| v.abs()).fold(RELATIVE_FLOOR, f64::max);
    diff / scale
}

#[derive(Clone, Copy, Debug)]
pub struct GradcheckOptions {
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    #[doc(hidden)]
    pub fault: Option<OpKind>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            seed: 0,
            step: 1e-5,
            tolerance: 1e-4,
            fault: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerReport {
    pub layer: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub passed: bool,
}

type Builder<'a> = dyn Fn(&mut Tape, &Bindings, &[Var]) -> Result<Var> + 'a;

/// Compares tape gradients of `sum(out ∘ R)` for a fixed random `R` against
/// central differences, over every parameter and every input.
pub fn check_layer(
    name: &str,
    params: &ParamSet,
    inputs: &[Tensor],
    build: &Builder<'_>,
    opts: &GradcheckOptions,
    rng: &mut impl Rng,
) -> Result<LayerReport> {
    // Probe once to learn the output shape, then draw the projection.
    let out_shape = {
        let mut tape = Tape::new();
        let p = params.bind(&mut tape);
        let xs: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let y = build(&mut tape, &p, &xs)?;
        tape.shape(y).to_vec()
    };
    let n: usize = out_shape.iter().product();
    let proj = Tensor::new(
        &out_shape,
        (0..n).map(|_| rng.sample(StandardNormal)).collect(),
    )?;

    let objective = |tape: &mut Tape, p: &Bindings, xs: &[Var]| -> Result<Var> {
        let y = build(tape, p, xs)?;
        let r = tape.constant(proj.clone());
        let yr = tape.mul(y, r)?;
        Ok(tape.sum(yr))
    };
    let evaluate = |params: &ParamSet, inputs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let p = params.bind(&mut tape);
        let xs: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let l = objective(&mut tape, &p, &xs)?;
        Ok(tape.value(l).item())
    };

    let mut tape = match opts.fault {
        Some(k) => Tape::with_fault(k),
        None => Tape::new(),
    };
    let p = params.bind(&mut tape);
    let xs: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let loss = objective(&mut tape, &p, &xs)?;
    tape.backward(loss)?;

    // Errors are normalized over the layer's whole gradient, so a parameter
    // whose true gradient is zero contributes only its absolute noise.
    let (mut all_analytic, mut all_numeric) = (Vec::new(), Vec::new());
    for id in params.ids() {
        let analytic = grad_or_zeros(&tape, p[id]);
        let numeric = finite_diff_grad(
            |t| {
                let mut probe = params.clone();
                probe.get_mut(id).data_mut().copy_from_slice(t.data());
                evaluate(&probe, inputs)
            },
            params.get(id),
            opts.step,
        )?;
        all_analytic.extend(analytic);
        all_numeric.extend_from_slice(numeric.data());
    }
    for (i, &x) in xs.iter().enumerate() {
        let analytic = grad_or_zeros(&tape, x);
        let numeric = finite_diff_grad(
            |t| {
                let mut probe = inputs.to_vec();
                probe[i] = t.clone();
                evaluate(params, &probe)
            },
            &inputs[i],
            opts.step,
        )?;
        all_analytic.extend(analytic);
        all_numeric.extend_from_slice(numeric.data());
    }
    let worst = relative_error(&all_analytic, &all_numeric);
    Ok(LayerReport {
        layer: name.to_string(),
        max_rel_error: worst,
        checked: all_analytic.len(),
        passed: worst < opts.tolerance,
    })
}

fn grad_or_zeros(tape: &Tape, v: Var) -> Vec<f64> {
    tape.grad(v)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; tape.value(v).len()])
}

fn normal(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

/// Moves every parameter off its initial value so that unit gains and zero
/// biases do not hide errors.
fn jitter(params: &mut ParamSet, rng: &mut impl Rng) {
    for (_, t) in params.iter_mut() {
        for v in t.data_mut() {
            *v += 0.3 * rng.sample::<f64, _>(StandardNormal);
        }
    }
}

/// Runs the full suite: linear, GELU, softmax, layer norm, attention, a
/// dimension-reducing block in both norm placements, the autoencoder stack, a miniature
/// encoder/decoder and the margin-cosine joint objective.
pub fn run_suite(opts: &GradcheckOptions) -> Result<Vec<LayerReport>> {
    if precision() != Precision::F64 {
        return Err(Error::Config("gradient checks need 64-bit precision".into()));
    }
    let mut rng = seeded_rng(opts.seed);
    let mut reports = Vec::new();

    {
        let mut params = ParamSet::new();
        let lin = Linear::new(&mut params, "lin", 5, 3, &mut rng);
        jitter(&mut params, &mut rng);
        let x = normal(&[4, 5], &mut rng);
        reports.push(check_layer(
            "linear",
            &params,
            &[x],
            &|t, p, xs| lin.forward(t, p, xs[0]),
            opts,
            &mut rng,
        )?);
    }
    {
        let x = normal(&[3, 4], &mut rng);
        reports.push(check_layer(
            "gelu",
            &ParamSet::new(),
            &[x],
            &|t, _, xs| Ok(t.gelu(xs[0])),
            opts,
            &mut rng,
        )?);
    }
    {
        let x = normal(&[3, 5], &mut rng);
        reports.push(check_layer(
            "softmax",
            &ParamSet::new(),
            &[x],
            &|t, _, xs| Ok(t.softmax_rows(xs[0])),
            opts,
            &mut rng,
        )?);
    }
    {
        let mut params = ParamSet::new();
        let ln = LayerNorm::new(&mut params, "ln", 6);
        jitter(&mut params, &mut rng);
        let x = normal(&[4, 6], &mut rng);
        reports.push(check_layer(
            "layer_norm",
            &params,
            &[x],
            &|t, p, xs| ln.forward(t, p, xs[0]),
            opts,
            &mut rng,
        )?);
    }
    {
        let mut params = ParamSet::new();
        let mha = MultiHeadAttention::new(&mut params, "mha", 6, 2, &mut rng)?;
        jitter(&mut params, &mut rng);
        let x = normal(&[6, 6], &mut rng);
        reports.push(check_layer(
            "attention",
            &params,
            &[x],
            &|t, p, xs| mha.forward(t, p, xs[0], 3),
            opts,
            &mut rng,
        )?);
    }
    {
        let mut params = ParamSet::new();
        let blk = TransformerBlock::new(&mut params, "blk", 6, 4, &mut rng)?;
        jitter(&mut params, &mut rng);
        let x = normal(&[6, 6], &mut rng);
        reports.push(check_layer(
            "transformer_block",
            &params,
            &[x],
            &|t, p, xs| blk.forward(t, p, xs[0], 3),
            opts,
            &mut rng,
        )?);
    }
    {
        let mut params = ParamSet::new();
        let blk = TransformerBlock::new(&mut params, "blk", 6, 4, &mut rng)?
            .with_placement(NormPlacement::Pre);
        jitter(&mut params, &mut rng);
        let x = normal(&[6, 6], &mut rng);
        reports.push(check_layer(
            "transformer_block_pre_norm",
            &params,
            &[x],
            &|t, p, xs| blk.forward(t, p, xs[0], 3),
            opts,
            &mut rng,
        )?);
    }
    {
        let mut ae = AeModel::new(&[8, 5, 3], opts.seed)?;
        jitter(ae.params_mut(), &mut rng);
        let x = normal(&[3, 8], &mut rng);
        reports.push(check_layer(
            "autoencoder",
            ae.params(),
            &[x],
            &|t, p, xs| ae.forward(t, p, xs[0]).map(|(_, recon)| recon),
            opts,
            &mut rng,
        )?);
    }
    {
        let config = ModelConfig::new(4, 6, 1, 2, 2, vec![6, 4, 3], opts.seed)?;
        let mut model = TransformerDR::build_symmetric(config, opts.seed)?;
        jitter(model.params_mut(), &mut rng);
        let x = normal(&[8, 6], &mut rng);
        reports.push(check_layer(
            "encoder_decoder",
            model.params(),
            &[x],
            &|t, p, xs| {
                let code = model.encode_patches(t, p, xs[0], 2)?;
                model.decode_patches(t, p, code, 2)
            },
            opts,
            &mut rng,
        )?);
    }
    {
        let mut params = ParamSet::new();
        let head = CosineHead::new(&mut params, "head", 6, 3, 0.35, 4.0, &mut rng);
        jitter(&mut params, &mut rng);
        let x = normal(&[4, 6], &mut rng);
        reports.push(check_layer(
            "margin_cosine",
            &params,
            &[x],
            &|t, p, xs| head.loss(t, p, xs[0], &[0, 2, 1, 2]),
            opts,
            &mut rng,
        )?);
    }
    Ok(reports)
}
