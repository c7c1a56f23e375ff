//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its output value and whatever
//! intermediates its backward rule needs. Nodes are created in evaluation
//! order, so the tape is topologically sorted by construction and
//! [`Tape::backward`] is a single reverse sweep.

use crate::error::{Error, Result};
use crate::tensor::{apply_precision, kernels, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation identifiers, used in diagnostics and for fault injection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    BatchMatMul,
    Transpose,
    Add,
    Sub,
    Mul,
    Scale,
    AddBias,
    TileRows,
    Gelu,
    SoftmaxRows,
    LayerNorm,
    Sum,
    Reshape,
    SliceCols,
    ConcatCols,
    L2NormalizeRows,
    CrossEntropy,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::MatMul => "matmul",
            OpKind::BatchMatMul => "batch_matmul",
            OpKind::Transpose => "transpose",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale => "scale",
            OpKind::AddBias => "add_bias",
            OpKind::TileRows => "tile_rows",
            OpKind::Gelu => "gelu",
            OpKind::SoftmaxRows => "softmax_rows",
            OpKind::LayerNorm => "layer_norm",
            OpKind::Sum => "sum",
            OpKind::Reshape => "reshape",
            OpKind::SliceCols => "slice_cols",
            OpKind::ConcatCols => "concat_cols",
            OpKind::L2NormalizeRows => "l2_normalize_rows",
            OpKind::CrossEntropy => "cross_entropy",
        }
    }

    pub fn parse(name: &str) -> Option<OpKind> {
        use OpKind::*;
        [
            Leaf,
            MatMul,
            BatchMatMul,
            Transpose,
            Add,
            Sub,
            Mul,
            Scale,
            AddBias,
            TileRows,
            Gelu,
            SoftmaxRows,
            LayerNorm,
            Sum,
            Reshape,
            SliceCols,
            ConcatCols,
            L2NormalizeRows,
            CrossEntropy,
        ]
        .into_iter()
        .find(|k| k.name() == name)
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    TileRows(Var),
    Gelu(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Sum(Var),
    Reshape(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    L2NormalizeRows {
        x: Var,
        norms: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::BatchMatMul(..) => OpKind::BatchMatMul,
            Op::Transpose(_) => OpKind::Transpose,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::AddBias(..) => OpKind::AddBias,
            Op::TileRows(_) => OpKind::TileRows,
            Op::Gelu(_) => OpKind::Gelu,
            Op::SoftmaxRows(_) => OpKind::SoftmaxRows,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Sum(_) => OpKind::Sum,
            Op::Reshape(_) => OpKind::Reshape,
            Op::SliceCols { .. } => OpKind::SliceCols,
            Op::ConcatCols(_) => OpKind::ConcatCols,
            Op::L2NormalizeRows { .. } => OpKind::L2NormalizeRows,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::BatchMatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddBias(a, b) => vec![*a, *b],
            Op::Transpose(x)
            | Op::Scale(x, _)
            | Op::TileRows(x)
            | Op::Gelu(x)
            | Op::SoftmaxRows(x)
            | Op::Sum(x)
            | Op::Reshape(x)
            | Op::SliceCols { x, .. }
            | Op::L2NormalizeRows { x, .. } => vec![*x],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::ConcatCols(xs) => xs.clone(),
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Recording of one forward evaluation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<OpKind>,
}

fn standard_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn standard_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Exact GELU, `x·Φ(x)`.
pub fn gelu_scalar(x: f64) -> f64 {
    x * standard_normal_cdf(x)
}

fn gelu_derivative(x: f64) -> f64 {
    standard_normal_cdf(x) + x * standard_normal_pdf(x)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Tape whose backward rule for `kind` is deliberately wrong. Used as a
    /// negative control by the gradient checker.
    #[doc(hidden)]
    pub fn with_fault(kind: OpKind) -> Self {
        Tape {
            nodes: Vec::new(),
            fault: Some(kind),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient accumulated by the last [`Tape::backward`], if `v` needs one.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn op_kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    /// Records a leaf. Its `requires_grad` flag decides whether a gradient is
    /// produced for it.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let mut value = tensor;
        let rg = value.requires_grad();
        value.mark_requires_grad(rg);
        self.push_raw(value, Op::Leaf)
    }

    /// Leaf that participates in differentiation.
    pub fn variable(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.detached().with_requires_grad())
    }

    /// Leaf that does not.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.detached())
    }

    fn push_raw(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, shape: &[usize], mut data: Vec<f64>, op: Op) -> Var {
        apply_precision(&mut data);
        let mut value = Tensor::new(shape, data).expect("op output shape is consistent");
        let rg = op.inputs().iter().any(|i| self.nodes[i.0].value.requires_grad());
        value.mark_requires_grad(rg);
        self.push_raw(value, op)
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        kernels::matmul(self.data(a), self.data(b), &mut out, m, k, n);
        Ok(self.push(&[m, n], out, Op::MatMul(a, b)))
    }

    /// Independent products over a leading batch axis: `[B×m×k]·[B×k×n]`.
    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Error::dim("batch_matmul", sa, sb));
        }
        let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; bs * m * n];
        let (da, db) = (self.data(a), self.data(b));
        for i in 0..bs {
            kernels::matmul(
                &da[i * m * k..(i + 1) * m * k],
                &db[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        Ok(self.push(&[bs, m, n], out, Op::BatchMatMul(a, b)))
    }

    /// Swaps the last two axes of a rank-2 or rank-3 tensor.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let (bs, r, c) = match s.as_slice() {
            [r, c] => (1, *r, *c),
            [b, r, c] => (*b, *r, *c),
            _ => return Err(Error::Shape(format!("transpose of shape {s:?}"))),
        };
        let mut out = vec![0.0; bs * r * c];
        let src = self.data(x);
        for i in 0..bs {
            kernels::transpose(
                &src[i * r * c..(i + 1) * r * c],
                &mut out[i * r * c..(i + 1) * r * c],
                r,
                c,
            );
        }
        let mut shape = s.clone();
        let n = shape.len();
        shape.swap(n - 2, n - 1);
        Ok(self.push(&shape, out, Op::Transpose(x)))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let out = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(&shape, out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.data(x).iter().map(|v| v * factor).collect();
        let shape = self.shape(x).to_vec();
        self.push(&shape, out, Op::Scale(x, factor))
    }

    /// Adds a `[d]` bias to every trailing row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let d = self.value(x).cols();
        if self.shape(bias) != [d] {
            return Err(Error::dim("add_bias", self.shape(x), self.shape(bias)));
        }
        let b = self.data(bias);
        let out = self
            .data(x)
            .chunks_exact(d)
            .flat_map(|row| row.iter().zip(b).map(|(v, b)| v + b))
            .collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(&shape, out, Op::AddBias(x, bias)))
    }

    /// Stacks `times` copies of a `[r×c]` tensor into `[times·r × c]`.
    pub fn tile_rows(&mut self, x: Var, times: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || times == 0 {
            return Err(Error::Shape(format!("tile_rows of shape {s:?} × {times}")));
        }
        let out = self.data(x).repeat(times);
        Ok(self.push(&[s[0] * times, s[1]], out, Op::TileRows(x)))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.data(x).iter().map(|&v| gelu_scalar(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(&shape, out, Op::Gelu(x))
    }

    /// Softmax over the trailing axis, computed after subtracting the row max.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let d = self.value(x).cols();
        let mut out = self.data(x).to_vec();
        for row in out.chunks_exact_mut(d) {
            softmax_in_place(row);
        }
        let shape = self.shape(x).to_vec();
        self.push(&shape, out, Op::SoftmaxRows(x))
    }

    /// Per-row standardization followed by an affine `gain`/`bias` of shape `[d]`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::Contract(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let d = self.value(x).cols();
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(Error::dim("layer_norm", self.shape(x), self.shape(gain)));
        }
        let rows = self.value(x).rows();
        let mut normalized = Vec::with_capacity(rows * d);
        let mut inv_std = Vec::with_capacity(rows);
        for row in self.data(x).chunks_exact(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            normalized.extend(row.iter().map(|v| (v - mean) * inv));
        }
        let (g, b) = (self.data(gain), self.data(bias));
        let out = normalized
            .chunks_exact(d)
            .flat_map(|row| row.iter().zip(g).zip(b).map(|((n, g), b)| n * g + b))
            .collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(
            &shape,
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            },
        ))
    }

    /// Sum of all entries, as a `[1]` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum();
        self.push(&[1], vec![s], Op::Sum(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).len() || shape.contains(&0) {
            return Err(Error::dim("reshape", self.shape(x), shape));
        }
        let out = self.data(x).to_vec();
        Ok(self.push(shape, out, Op::Reshape(x)))
    }

    /// Columns `start..end` of the trailing axis.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let d = self.value(x).cols();
        if start >= end || end > d {
            return Err(Error::Shape(format!("slice {start}..{end} of {d} columns")));
        }
        let out = self
            .data(x)
            .chunks_exact(d)
            .flat_map(|row| row[start..end].iter().copied())
            .collect();
        let mut shape = self.shape(x).to_vec();
        *shape.last_mut().unwrap() = end - start;
        Ok(self.push(&shape, out, Op::SliceCols { x, start }))
    }

    /// Concatenates along the trailing axis; leading extents must agree.
    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let lead = self.shape(first)[..self.shape(first).len() - 1].to_vec();
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            if s[..s.len() - 1] != lead[..] {
                return Err(Error::dim("concat_cols", self.shape(first), s));
            }
            total += s[s.len() - 1];
        }
        let rows = self.value(first).rows();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &x in xs {
                out.extend_from_slice(self.value(x).row(r));
            }
        }
        let mut shape = lead;
        shape.push(total);
        Ok(self.push(&shape, out, Op::ConcatCols(xs.to_vec())))
    }

    /// Scales each trailing row to unit Euclidean length.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let d = self.value(x).cols();
        let mut norms = Vec::with_capacity(self.value(x).rows());
        let mut out = Vec::with_capacity(self.value(x).len());
        for (r, row) in self.data(x).chunks_exact(d).enumerate() {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(n > 1e-12) || !n.is_finite() {
                return Err(Error::Numeric(format!(
                    "cannot normalize row {r}: norm {n:e}"
                )));
            }
            norms.push(n);
            out.extend(row.iter().map(|v| v / n));
        }
        let shape = self.shape(x).to_vec();
        Ok(self.push(&shape, out, Op::L2NormalizeRows { x, norms }))
    }

    /// Mean softmax cross-entropy of `[n×c]` logits against class targets.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != targets.len() {
            return Err(Error::dim("cross_entropy", s, &[targets.len()]));
        }
        let c = s[1];
        if let Some(&t) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::Contract(format!("target class {t} out of range for {c} classes")));
        }
        let mut probs = self.data(logits).to_vec();
        let mut loss = 0.0;
        for (row, &t) in probs.chunks_exact_mut(c).zip(targets) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[t];
            softmax_in_place(row);
        }
        loss /= targets.len() as f64;
        Ok(self.push(
            &[1],
            vec![loss],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    /// Clears every stored gradient.
    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
    }

    /// Propagates d`loss`/d`v` to every node that requires a gradient.
    ///
    /// Gradients accumulate additively, both across fan-out inside this
    /// sweep and across repeated calls; use [`Tape::zero_grads`] in between.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.value(loss).requires_grad() {
            return Ok(());
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..n).rev() {
            let Some(upstream) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if !node.value.requires_grad() {
                continue;
            }
            let mut contributions = self.local_backward(i, &upstream);
            if Some(node.op.kind()) == self.fault {
                for (_, g) in &mut contributions {
                    for v in g.iter_mut() {
                        *v *= 1.5;
                    }
                }
            }
            for (input, g) in contributions {
                if !self.nodes[input.0].value.requires_grad() {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
            self.nodes[i].value.accumulate_grad(&upstream);
        }
        Ok(())
    }

    fn local_backward(&self, i: usize, up: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[i];
        let needs = |v: Var| self.nodes[v.0].value.requires_grad();
        match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                let mut out = Vec::new();
                if needs(*a) {
                    let mut da = vec![0.0; m * k];
                    kernels::matmul_nt(up, self.data(*b), &mut da, m, n, k);
                    out.push((*a, da));
                }
                if needs(*b) {
                    let mut db = vec![0.0; k * n];
                    kernels::matmul_tn(self.data(*a), up, &mut db, m, k, n);
                    out.push((*b, db));
                }
                out
            }
            Op::BatchMatMul(a, b) => {
                let sa = self.shape(*a);
                let (bs, m, k) = (sa[0], sa[1], sa[2]);
                let n = self.shape(*b)[2];
                let (av, bv) = (self.data(*a), self.data(*b));
                let mut da = vec![0.0; bs * m * k];
                let mut db = vec![0.0; bs * k * n];
                for j in 0..bs {
                    let g = &up[j * m * n..(j + 1) * m * n];
                    if needs(*a) {
                        kernels::matmul_nt(
                            g,
                            &bv[j * k * n..(j + 1) * k * n],
                            &mut da[j * m * k..(j + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                    if needs(*b) {
                        kernels::matmul_tn(
                            &av[j * m * k..(j + 1) * m * k],
                            g,
                            &mut db[j * k * n..(j + 1) * k * n],
                            m,
                            k,
                            n,
                        );
                    }
                }
                vec![(*a, da), (*b, db)]
            }
            Op::Transpose(x) => {
                let s = node.value.shape();
                let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
                let bs = node.value.len() / (r * c);
                let mut dx = vec![0.0; up.len()];
                for j in 0..bs {
                    kernels::transpose(
                        &up[j * r * c..(j + 1) * r * c],
                        &mut dx[j * r * c..(j + 1) * r * c],
                        r,
                        c,
                    );
                }
                vec![(*x, dx)]
            }
            Op::Add(a, b) => vec![(*a, up.to_vec()), (*b, up.to_vec())],
            Op::Sub(a, b) => vec![(*a, up.to_vec()), (*b, up.iter().map(|g| -g).collect())],
            Op::Mul(a, b) => {
                let (av, bv) = (self.data(*a), self.data(*b));
                vec![
                    (*a, up.iter().zip(bv).map(|(g, b)| g * b).collect()),
                    (*b, up.iter().zip(av).map(|(g, a)| g * a).collect()),
                ]
            }
            Op::Scale(x, f) => vec![(*x, up.iter().map(|g| g * f).collect())],
            Op::AddBias(x, b) => {
                let d = node.value.cols();
                let mut db = vec![0.0; d];
                for row in up.chunks_exact(d) {
                    db.iter_mut().zip(row).for_each(|(a, g)| *a += g);
                }
                vec![(*x, up.to_vec()), (*b, db)]
            }
            Op::TileRows(x) => {
                let len = self.value(*x).len();
                let mut dx = vec![0.0; len];
                for chunk in up.chunks_exact(len) {
                    dx.iter_mut().zip(chunk).for_each(|(a, g)| *a += g);
                }
                vec![(*x, dx)]
            }
            Op::Gelu(x) => {
                let dx = up
                    .iter()
                    .zip(self.data(*x))
                    .map(|(g, &v)| g * gelu_derivative(v))
                    .collect();
                vec![(*x, dx)]
            }
            Op::SoftmaxRows(x) => {
                let d = node.value.cols();
                let mut dx = Vec::with_capacity(up.len());
                for (y, g) in node.value.data().chunks_exact(d).zip(up.chunks_exact(d)) {
                    let dot: f64 = y.iter().zip(g).map(|(y, g)| y * g).sum();
                    dx.extend(y.iter().zip(g).map(|(y, g)| y * (g - dot)));
                }
                vec![(*x, dx)]
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let d = node.value.cols();
                let g = self.data(*gain);
                let mut dx = Vec::with_capacity(up.len());
                let mut dgain = vec![0.0; d];
                let mut dbias = vec![0.0; d];
                for ((dy, xh), &inv) in up
                    .chunks_exact(d)
                    .zip(normalized.chunks_exact(d))
                    .zip(inv_std)
                {
                    let mut sum_dxh = 0.0;
                    let mut sum_dxh_xh = 0.0;
                    for j in 0..d {
                        dgain[j] += dy[j] * xh[j];
                        dbias[j] += dy[j];
                        let dxh = dy[j] * g[j];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh[j];
                    }
                    let scale = inv / d as f64;
                    dx.extend((0..d).map(|j| {
                        scale * (d as f64 * dy[j] * g[j] - sum_dxh - xh[j] * sum_dxh_xh)
                    }));
                }
                vec![(*x, dx), (*gain, dgain), (*bias, dbias)]
            }
            Op::Sum(x) => vec![(*x, vec![up[0]; self.value(*x).len()])],
            Op::Reshape(x) => vec![(*x, up.to_vec())],
            Op::SliceCols { x, start } => {
                let d_in = self.value(*x).cols();
                let w = node.value.cols();
                let mut dx = vec![0.0; self.value(*x).len()];
                for (dst, g) in dx.chunks_exact_mut(d_in).zip(up.chunks_exact(w)) {
                    dst[*start..start + w].copy_from_slice(g);
                }
                vec![(*x, dx)]
            }
            Op::ConcatCols(xs) => {
                let total = node.value.cols();
                let mut offset = 0;
                let mut out = Vec::with_capacity(xs.len());
                for &x in xs {
                    let w = self.value(x).cols();
                    let dx = up
                        .chunks_exact(total)
                        .flat_map(|row| row[offset..offset + w].iter().copied())
                        .collect();
                    out.push((x, dx));
                    offset += w;
                }
                out
            }
            Op::L2NormalizeRows { x, norms } => {
                let d = node.value.cols();
                let mut dx = Vec::with_capacity(up.len());
                for ((y, g), n) in node
                    .value
                    .data()
                    .chunks_exact(d)
                    .zip(up.chunks_exact(d))
                    .zip(norms)
                {
                    let dot: f64 = y.iter().zip(g).map(|(y, g)| y * g).sum();
                    dx.extend(y.iter().zip(g).map(|(y, g)| (g - y * dot) / n));
                }
                vec![(*x, dx)]
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let c = self.value(*logits).cols();
                let scale = up[0] / targets.len() as f64;
                let mut dx = probs.clone();
                for (row, &t) in dx.chunks_exact_mut(c).zip(targets) {
                    row[t] -= 1.0;
                    row.iter_mut().for_each(|v| *v *= scale);
                }
                vec![(*logits, dx)]
            }
        }
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}
