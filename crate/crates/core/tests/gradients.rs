//! Every differentiable tape op against central differences, on random
//! shapes and values.

use proptest::prelude::*;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use transdr::gradcheck::{finite_diff_grad, relative_error, run_suite, GradcheckOptions};
use transdr::{OpKind, Result, Tape, Tensor, Var};

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-6;

type Op<'a> = dyn Fn(&mut Tape, &[Var]) -> Result<Var> + 'a;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

/// Scalarizes `op` as `sum(out ∘ w)` for a random `w`, then compares every
/// input gradient with the oracle. Returns the worst relative error.
fn worst_error(op: &Op<'_>, inputs: &[Tensor], rng: &mut ChaCha8Rng) -> f64 {
    let scalar = |tape: &mut Tape, xs: &[Var], w: &Tensor| -> Result<Var> {
        let y = op(tape, xs)?;
        let w = tape.constant(w.clone().reshape(tape.shape(y))?);
        let p = tape.mul(y, w)?;
        Ok(tape.sum(p))
    };
    let out_len = {
        let mut tape = Tape::new();
        let xs: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let y = op(&mut tape, &xs).unwrap();
        tape.value(y).len()
    };
    let w = random(&[out_len], rng);

    let mut tape = Tape::new();
    let xs: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let loss = scalar(&mut tape, &xs, &w).unwrap();
    tape.backward(loss).unwrap();

    let mut worst = 0.0f64;
    for (i, x0) in inputs.iter().enumerate() {
        let analytic = tape.grad(xs[i]).map(<[f64]>::to_vec).unwrap_or(vec![0.0; x0.len()]);
        let numeric = finite_diff_grad(
            |probe| {
                let mut t = Tape::new();
                let vs: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, x)| t.constant(if j == i { probe.clone() } else { x.clone() }))
                    .collect();
                let l = scalar(&mut t, &vs, &w)?;
                Ok(t.value(l).item())
            },
            x0,
            STEP,
        )
        .unwrap();
        worst = worst.max(relative_error(&analytic, numeric.data()));
    }
    worst
}

fn dims() -> impl Strategy<Value = (usize, usize, usize, u64)> {
    (1usize..5, 1usize..5, 1usize..5, any::<u64>())
}

macro_rules! op_property {
    ($name:ident, |$rng:ident, $m:ident, $k:ident, $n:ident| $inputs:expr, $op:expr) => {
        proptest! {
            #![proptest_config(ProptestConfig::with_cases(100))]
            #[test]
            fn $name(($m, $k, $n, seed) in dims()) {
                let mut $rng = ChaCha8Rng::seed_from_u64(seed);
                let inputs: Vec<Tensor> = $inputs;
                let err = worst_error(&$op, &inputs, &mut $rng);
                prop_assert!(err < TOL, "relative error {err}");
            }
        }
    };
}

op_property!(matmul, |rng, m, k, n| vec![random(&[m, k], &mut rng), random(&[k, n], &mut rng)],
    |t: &mut Tape, x: &[Var]| t.matmul(x[0], x[1]));
op_property!(batch_matmul, |rng, m, k, n| vec![random(&[2, m, k], &mut rng), random(&[2, k, n], &mut rng)],
    |t: &mut Tape, x: &[Var]| t.batch_matmul(x[0], x[1]));
op_property!(transpose, |rng, m, k, n| vec![random(&[m, k, n], &mut rng)],
    |t: &mut Tape, x: &[Var]| t.transpose(x[0]));
op_property!(add, |rng, m, k, _n| vec![random(&[m, k], &mut rng), random(&[m, k], &mut rng)],
    |t: &mut Tape, x: &[Var]| t.add(x[0], x[1]));
op_property!(sub, |rng, m, k, _n| vec![random(&[m, k], &mut rng), random(&[m, k], &mut rng)],
    |t: &mut Tape, x: &[Var]| t.sub(x[0], x[1]));
op_property!(mul, |rng, m, k, _n| vec![random(&[m, k], &mut rng), random(&[m, k], &mut rng)],
    |t: &mut Tape, x: &[Var]| t.mul(x[0], x[1]));
op_property!(scale, |rng, m, k, _n| vec![random(&[m, k], &mut rng)],
    |t: &mut Tape, x: &[Var]| Ok(t.scale(x[0], -2.5)));
op_property!(add_bias, |rng, m, k, _n| vec![random(&[m, k], &mut rng), random(&[k], &mut rng)],
    |t: &mut Tape, x: &[Var]| t.add_bias(x[0], x[1]));
op_property!(tile_rows, |rng, m, k, _n| vec![random(&[m, k], &mut rng)],
    |t: &mut Tape, x: &[Var]| t.tile_rows(x[0], 3));
op_property!(gelu, |rng, m, k, _n| vec![random(&[m, k], &mut rng)],
    |t: &mut Tape, x: &[Var]| Ok(t.gelu(x[0])));
op_property!(softmax_rows, |rng, m, k, _n| vec![random(&[m, k + 1], &mut rng)],
    |t: &mut Tape, x: &[Var]| Ok(t.softmax_rows(x[0])));
op_property!(layer_norm, |rng, m, k, _n| vec![
        random(&[m, k + 2], &mut rng),
        random(&[k + 2], &mut rng),
        random(&[k + 2], &mut rng),
    ],
    |t: &mut Tape, x: &[Var]| t.layer_norm(x[0], x[1], x[2], 1e-5));
op_property!(sum, |rng, m, k, _n| vec![random(&[m, k], &mut rng)],
    |t: &mut Tape, x: &[Var]| Ok(t.sum(x[0])));
op_property!(reshape, |rng, m, k, _n| vec![random(&[m, k], &mut rng)],
    |t: &mut Tape, x: &[Var]| t.reshape(x[0], &[k, m]));
op_property!(slice_cols, |rng, m, k, n| vec![random(&[m, k + n], &mut rng)],
    |t: &mut Tape, x: &[Var]| {
        let c = t.shape(x[0])[1];
        t.slice_cols(x[0], c / 3, c)
    });
op_property!(concat_cols, |rng, m, k, n| vec![random(&[m, k], &mut rng), random(&[m, n], &mut rng)],
    |t: &mut Tape, x: &[Var]| t.concat_cols(&[x[0], x[1], x[0]]));
op_property!(l2_normalize_rows, |rng, m, k, _n| vec![random(&[m, k + 1], &mut rng)],
    |t: &mut Tape, x: &[Var]| t.l2_normalize_rows(x[0]));
op_property!(cross_entropy, |rng, m, k, _n| vec![random(&[m, k + 1], &mut rng)],
    |t: &mut Tape, x: &[Var]| {
        let [rows, classes] = t.shape(x[0]) else { unreachable!() };
        let (rows, classes) = (*rows, *classes);
        let targets: Vec<usize> = (0..rows).map(|r| (r * 7) % classes).collect();
        t.cross_entropy(x[0], &targets)
    });

#[test]
fn suite_passes_at_default_tolerance() {
    for seed in 0..3 {
        let opts = GradcheckOptions { seed, ..Default::default() };
        for r in run_suite(&opts).unwrap() {
            assert!(r.passed, "seed {seed}: {r:?}");
            assert!(r.max_rel_error < 1e-4);
        }
    }
}

#[test]
fn injected_backward_faults_are_caught() {
    for fault in [
        OpKind::MatMul,
        OpKind::Gelu,
        OpKind::SoftmaxRows,
        OpKind::LayerNorm,
        OpKind::AddBias,
        OpKind::CrossEntropy,
    ] {
        let opts = GradcheckOptions { fault: Some(fault), ..Default::default() };
        let reports = run_suite(&opts).unwrap();
        assert!(
            reports.iter().any(|r| !r.passed),
            "fault in {} went unnoticed",
            fault.name()
        );
    }
}
