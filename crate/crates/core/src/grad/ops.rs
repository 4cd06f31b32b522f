//! Op kinds with their forward and backward kernels.
//!
//! Every kernel is a pure function of its input values so a recorded graph
//! can be replayed with perturbed leaves (see `gradcheck`).

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use super::{GradError, Tensor};

/// Vector norm used by the reduction ops.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NormKind {
    L1,
    L2,
    Linf,
}

/// User-supplied op. Lets callers plug a kernel (with its own backward rule)
/// into a graph.
pub trait CustomOp: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor, GradError>;
    /// Gradients with respect to each input, given the upstream gradient.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &Tensor) -> Vec<Tensor>;
}

/// A recorded operation including its attributes.
#[derive(Clone, Debug)]
pub enum Op {
    Leaf,
    /// `x (n,p) · w (p,q) + b (q)`.
    Linear,
    /// `a (n,p) · b (p,q)`.
    MatMul,
    /// `a (n,p) · b(q,p)^T`.
    MatMulT,
    Transpose,
    /// 3x3 kernel, stride 1, zero "same" padding: `x (n,c,h,w)`, `k (o,c,3,3)`, `b (o)`.
    Conv2d,
    Relu,
    /// 2x2 window, stride 2 (odd trailing rows/columns are dropped).
    MaxPool2,
    /// `(n,c,h,w) -> (n,c)`.
    GlobalAvgPool,
    /// Concatenation of 2-D inputs along axis 1.
    Concat,
    /// Slice `[start, start+len)` along axis 1.
    Narrow { start: usize, len: usize },
    Add,
    Sub,
    Mul,
    Scale(f64),
    /// Per-row norm: `(n, m) -> (n)`.
    RowNorm(NormKind),
    /// Per-column mean absolute value: `(n, m) -> (m)`.
    ColMeanAbs,
    /// Norm of the flattened input, scalar output.
    Norm(NormKind),
    Mean,
    Sum,
    /// Mean softmax cross-entropy. Single-column logits are a binary
    /// logistic model with labels in {0, 1}.
    SoftmaxCrossEntropy { labels: Arc<[usize]> },
    Frobenius,
    Custom(Arc<dyn CustomOp>),
}

/// Fieldless op names, parsed from strings by config-driven callers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Linear,
    MatMul,
    MatMulT,
    Transpose,
    Conv2d,
    Relu,
    MaxPool2,
    GlobalAvgPool,
    Concat,
    Narrow,
    Add,
    Sub,
    Mul,
    Scale,
    RowNorm,
    ColMeanAbs,
    Norm,
    Mean,
    Sum,
    SoftmaxCrossEntropy,
    Frobenius,
}

impl OpKind {
    pub const ALL: [OpKind; 21] = [
        OpKind::Linear,
        OpKind::MatMul,
        OpKind::MatMulT,
        OpKind::Transpose,
        OpKind::Conv2d,
        OpKind::Relu,
        OpKind::MaxPool2,
        OpKind::GlobalAvgPool,
        OpKind::Concat,
        OpKind::Narrow,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Scale,
        OpKind::RowNorm,
        OpKind::ColMeanAbs,
        OpKind::Norm,
        OpKind::Mean,
        OpKind::Sum,
        OpKind::SoftmaxCrossEntropy,
        OpKind::Frobenius,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Linear => "linear",
            OpKind::MatMul => "matmul",
            OpKind::MatMulT => "matmul_t",
            OpKind::Transpose => "transpose",
            OpKind::Conv2d => "conv2d",
            OpKind::Relu => "relu",
            OpKind::MaxPool2 => "maxpool2",
            OpKind::GlobalAvgPool => "global_avg_pool",
            OpKind::Concat => "concat",
            OpKind::Narrow => "narrow",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale => "scale",
            OpKind::RowNorm => "row_norm",
            OpKind::ColMeanAbs => "col_mean_abs",
            OpKind::Norm => "norm",
            OpKind::Mean => "mean",
            OpKind::Sum => "sum",
            OpKind::SoftmaxCrossEntropy => "softmax_cross_entropy",
            OpKind::Frobenius => "frobenius",
        }
    }
}

impl FromStr for OpKind {
    type Err = GradError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OpKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| GradError::UnknownOp(s.to_string()))
    }
}

/// Attributes for ops built from an `OpKind`.
#[derive(Clone, Debug, Default)]
pub struct OpAttrs {
    pub start: Option<usize>,
    pub len: Option<usize>,
    pub factor: Option<f64>,
    pub norm: Option<NormKind>,
    pub labels: Option<Arc<[usize]>>,
}

impl Op {
    pub fn from_kind(kind: OpKind, attrs: &OpAttrs) -> Result<Op, GradError> {
        let missing = |what: &str| GradError::MissingAttr {
            op: kind.name().to_string(),
            attr: what.to_string(),
        };
        Ok(match kind {
            OpKind::Linear => Op::Linear,
            OpKind::MatMul => Op::MatMul,
            OpKind::MatMulT => Op::MatMulT,
            OpKind::Transpose => Op::Transpose,
            OpKind::Conv2d => Op::Conv2d,
            OpKind::Relu => Op::Relu,
            OpKind::MaxPool2 => Op::MaxPool2,
            OpKind::GlobalAvgPool => Op::GlobalAvgPool,
            OpKind::Concat => Op::Concat,
            OpKind::Narrow => Op::Narrow {
                start: attrs.start.ok_or_else(|| missing("start"))?,
                len: attrs.len.ok_or_else(|| missing("len"))?,
            },
            OpKind::Add => Op::Add,
            OpKind::Sub => Op::Sub,
            OpKind::Mul => Op::Mul,
            OpKind::Scale => Op::Scale(attrs.factor.ok_or_else(|| missing("factor"))?),
            OpKind::RowNorm => Op::RowNorm(attrs.norm.ok_or_else(|| missing("norm"))?),
            OpKind::ColMeanAbs => Op::ColMeanAbs,
            OpKind::Norm => Op::Norm(attrs.norm.ok_or_else(|| missing("norm"))?),
            OpKind::Mean => Op::Mean,
            OpKind::Sum => Op::Sum,
            OpKind::SoftmaxCrossEntropy => Op::SoftmaxCrossEntropy {
                labels: attrs.labels.clone().ok_or_else(|| missing("labels"))?,
            },
            OpKind::Frobenius => Op::Frobenius,
        })
    }

    pub fn name(&self) -> String {
        match self {
            Op::Leaf => "leaf".into(),
            Op::Linear => "linear".into(),
            Op::MatMul => "matmul".into(),
            Op::MatMulT => "matmul_t".into(),
            Op::Transpose => "transpose".into(),
            Op::Conv2d => "conv2d".into(),
            Op::Relu => "relu".into(),
            Op::MaxPool2 => "maxpool2".into(),
            Op::GlobalAvgPool => "global_avg_pool".into(),
            Op::Concat => "concat".into(),
            Op::Narrow { .. } => "narrow".into(),
            Op::Add => "add".into(),
            Op::Sub => "sub".into(),
            Op::Mul => "mul".into(),
            Op::Scale(_) => "scale".into(),
            Op::RowNorm(_) => "row_norm".into(),
            Op::ColMeanAbs => "col_mean_abs".into(),
            Op::Norm(_) => "norm".into(),
            Op::Mean => "mean".into(),
            Op::Sum => "sum".into(),
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy".into(),
            Op::Frobenius => "frobenius".into(),
            Op::Custom(c) => format!("custom:{}", c.name()),
        }
    }
}

fn mismatch(op: &Op, lhs: &[usize], rhs: &[usize]) -> GradError {
    GradError::ShapeMismatch {
        op: op.name(),
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

fn arity(op: &Op, inputs: &[&Tensor], n: usize) -> Result<(), GradError> {
    if inputs.len() != n {
        return Err(GradError::Arity {
            op: op.name(),
            expected: n,
            found: inputs.len(),
        });
    }
    Ok(())
}

fn rank(op: &Op, t: &Tensor, r: usize) -> Result<(), GradError> {
    if t.rank() != r {
        let want = vec![0; r];
        return Err(mismatch(op, t.shape(), &want));
    }
    Ok(())
}

/// `c = alpha * op(a) * op(b) + beta * c` on row-major slices.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    // Logical a is m×k; stored row-major as m×k, or k×m when transposed.
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    if k == 0 {
        for v in c.iter_mut() {
            *v *= beta;
        }
        return;
    }
    // SAFETY: slice lengths cover the strided extents computed above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Auxiliary state some kernels keep for their backward pass.
#[derive(Clone, Debug, Default)]
pub(crate) enum Aux {
    #[default]
    None,
    Indices(Vec<usize>),
    Probs(Vec<f64>),
}

pub(crate) fn forward(op: &Op, inputs: &[&Tensor]) -> Result<(Tensor, Aux), GradError> {
    match op {
        Op::Leaf => Err(GradError::UnknownOp("leaf".into())),
        Op::Linear => {
            arity(op, inputs, 3)?;
            let (x, w, b) = (inputs[0], inputs[1], inputs[2]);
            rank(op, x, 2)?;
            rank(op, w, 2)?;
            let (n, p) = (x.shape()[0], x.shape()[1]);
            let q = w.shape()[1];
            if w.shape()[0] != p {
                return Err(mismatch(op, x.shape(), w.shape()));
            }
            if b.shape() != [q] {
                return Err(mismatch(op, w.shape(), b.shape()));
            }
            let mut out = Vec::with_capacity(n * q);
            for _ in 0..n {
                out.extend_from_slice(b.data());
            }
            gemm(n, p, q, x.data(), false, w.data(), false, &mut out, 1.0);
            Ok((Tensor::from_vec(&[n, q], out), Aux::None))
        }
        Op::MatMul => {
            arity(op, inputs, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            rank(op, a, 2)?;
            rank(op, b, 2)?;
            if a.shape()[1] != b.shape()[0] {
                return Err(mismatch(op, a.shape(), b.shape()));
            }
            let (n, p, q) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let mut out = vec![0.0; n * q];
            gemm(n, p, q, a.data(), false, b.data(), false, &mut out, 0.0);
            Ok((Tensor::from_vec(&[n, q], out), Aux::None))
        }
        Op::MatMulT => {
            arity(op, inputs, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            rank(op, a, 2)?;
            rank(op, b, 2)?;
            if a.shape()[1] != b.shape()[1] {
                return Err(mismatch(op, a.shape(), b.shape()));
            }
            let (n, p, q) = (a.shape()[0], a.shape()[1], b.shape()[0]);
            let mut out = vec![0.0; n * q];
            gemm(n, p, q, a.data(), false, b.data(), true, &mut out, 0.0);
            Ok((Tensor::from_vec(&[n, q], out), Aux::None))
        }
        Op::Transpose => {
            arity(op, inputs, 1)?;
            let a = inputs[0];
            rank(op, a, 2)?;
            Ok((transpose(a), Aux::None))
        }
        Op::Conv2d => {
            arity(op, inputs, 3)?;
            let (x, k, b) = (inputs[0], inputs[1], inputs[2]);
            rank(op, x, 4)?;
            rank(op, k, 4)?;
            let s = x.shape();
            let ks = k.shape();
            if ks[1] != s[1] || ks[2] != 3 || ks[3] != 3 {
                return Err(mismatch(op, s, ks));
            }
            if b.shape() != [ks[0]] {
                return Err(mismatch(op, ks, b.shape()));
            }
            Ok((conv_forward(x, k, b), Aux::None))
        }
        Op::Relu => {
            arity(op, inputs, 1)?;
            Ok((inputs[0].map(|v| v.max(0.0)), Aux::None))
        }
        Op::MaxPool2 => {
            arity(op, inputs, 1)?;
            rank(op, inputs[0], 4)?;
            let (out, idx) = maxpool_forward(inputs[0]);
            Ok((out, Aux::Indices(idx)))
        }
        Op::GlobalAvgPool => {
            arity(op, inputs, 1)?;
            let x = inputs[0];
            rank(op, x, 4)?;
            let s = x.shape();
            let hw = s[2] * s[3];
            let data = x
                .data()
                .chunks(hw)
                .map(|c| c.iter().sum::<f64>() / hw as f64)
                .collect();
            Ok((Tensor::from_vec(&[s[0], s[1]], data), Aux::None))
        }
        Op::Concat => {
            if inputs.is_empty() {
                return Err(GradError::Arity {
                    op: op.name(),
                    expected: 1,
                    found: 0,
                });
            }
            let n = inputs[0].rows();
            for t in inputs {
                rank(op, t, 2)?;
                if t.rows() != n {
                    return Err(mismatch(op, inputs[0].shape(), t.shape()));
                }
            }
            let total: usize = inputs.iter().map(|t| t.shape()[1]).sum();
            let mut data = Vec::with_capacity(n * total);
            for i in 0..n {
                for t in inputs {
                    data.extend_from_slice(t.row(i));
                }
            }
            Ok((Tensor::from_vec(&[n, total], data), Aux::None))
        }
        Op::Narrow { start, len } => {
            arity(op, inputs, 1)?;
            let x = inputs[0];
            if x.rank() < 2 || start + len > x.shape()[1] || *len == 0 {
                return Err(mismatch(op, x.shape(), &[*start, *len]));
            }
            let inner: usize = x.shape()[2..].iter().product();
            let c = x.shape()[1];
            let mut data = Vec::with_capacity(x.rows() * len * inner);
            for i in 0..x.rows() {
                let base = i * c * inner;
                data.extend_from_slice(&x.data()[base + start * inner..base + (start + len) * inner]);
            }
            let mut shape = x.shape().to_vec();
            shape[1] = *len;
            Ok((Tensor::from_vec(&shape, data), Aux::None))
        }
        Op::Add | Op::Sub | Op::Mul => {
            arity(op, inputs, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape() != b.shape() {
                return Err(mismatch(op, a.shape(), b.shape()));
            }
            let f: fn(f64, f64) -> f64 = match op {
                Op::Add => |x, y| x + y,
                Op::Sub => |x, y| x - y,
                _ => |x, y| x * y,
            };
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            Ok((Tensor::from_vec(a.shape(), data), Aux::None))
        }
        Op::Scale(c) => {
            arity(op, inputs, 1)?;
            Ok((inputs[0].map(|v| v * c), Aux::None))
        }
        Op::RowNorm(kind) => {
            arity(op, inputs, 1)?;
            let x = inputs[0];
            rank(op, x, 2)?;
            let data = (0..x.rows()).map(|i| norm_of(*kind, x.row(i))).collect();
            Ok((Tensor::vector(data), Aux::None))
        }
        Op::ColMeanAbs => {
            arity(op, inputs, 1)?;
            let x = inputs[0];
            rank(op, x, 2)?;
            let (n, m) = (x.shape()[0], x.shape()[1]);
            let mut out = vec![0.0; m];
            for i in 0..n {
                for (o, v) in out.iter_mut().zip(x.row(i)) {
                    *o += v.abs();
                }
            }
            for o in &mut out {
                *o /= n as f64;
            }
            Ok((Tensor::vector(out), Aux::None))
        }
        Op::Norm(kind) => {
            arity(op, inputs, 1)?;
            Ok((Tensor::scalar(norm_of(*kind, inputs[0].data())), Aux::None))
        }
        Op::Mean => {
            arity(op, inputs, 1)?;
            let x = inputs[0];
            if x.is_empty() {
                return Err(mismatch(op, x.shape(), &[1]));
            }
            Ok((Tensor::scalar(x.data().iter().sum::<f64>() / x.len() as f64), Aux::None))
        }
        Op::Sum => {
            arity(op, inputs, 1)?;
            Ok((Tensor::scalar(inputs[0].data().iter().sum()), Aux::None))
        }
        Op::SoftmaxCrossEntropy { labels } => {
            arity(op, inputs, 1)?;
            let z = inputs[0];
            rank(op, z, 2)?;
            let (n, k) = (z.shape()[0], z.shape()[1]);
            if labels.len() != n || n == 0 {
                return Err(mismatch(op, z.shape(), &[labels.len()]));
            }
            let classes = k.max(2);
            if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
                return Err(GradError::LabelOutOfRange { label: bad, classes });
            }
            let (loss, probs) = softmax_ce(z, labels);
            Ok((Tensor::scalar(loss), Aux::Probs(probs)))
        }
        Op::Frobenius => {
            arity(op, inputs, 1)?;
            Ok((Tensor::scalar(norm_of(NormKind::L2, inputs[0].data())), Aux::None))
        }
        Op::Custom(c) => Ok((c.forward(inputs)?, Aux::None)),
    }
}

/// Gradients for each input. `needs[i]` says whether input `i` wants one;
/// entries that are not needed may be returned as `None`.
pub(crate) fn backward(
    op: &Op,
    inputs: &[&Tensor],
    out: &Tensor,
    aux: &Aux,
    g: &Tensor,
    needs: &[bool],
) -> Vec<Option<Tensor>> {
    let want = |i: usize| needs.get(i).copied().unwrap_or(false);
    match op {
        Op::Leaf => vec![],
        Op::Linear => {
            let (x, w) = (inputs[0], inputs[1]);
            let (n, p, q) = (x.shape()[0], x.shape()[1], w.shape()[1]);
            let dx = want(0).then(|| {
                let mut d = vec![0.0; n * p];
                gemm(n, q, p, g.data(), false, w.data(), true, &mut d, 0.0);
                Tensor::from_vec(&[n, p], d)
            });
            let dw = want(1).then(|| {
                let mut d = vec![0.0; p * q];
                gemm(p, n, q, x.data(), true, g.data(), false, &mut d, 0.0);
                Tensor::from_vec(&[p, q], d)
            });
            let db = want(2).then(|| {
                let mut d = vec![0.0; q];
                for i in 0..n {
                    for (a, v) in d.iter_mut().zip(g.row(i)) {
                        *a += v;
                    }
                }
                Tensor::vector(d)
            });
            vec![dx, dw, db]
        }
        Op::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            let (n, p, q) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let da = want(0).then(|| {
                let mut d = vec![0.0; n * p];
                gemm(n, q, p, g.data(), false, b.data(), true, &mut d, 0.0);
                Tensor::from_vec(&[n, p], d)
            });
            let db = want(1).then(|| {
                let mut d = vec![0.0; p * q];
                gemm(p, n, q, a.data(), true, g.data(), false, &mut d, 0.0);
                Tensor::from_vec(&[p, q], d)
            });
            vec![da, db]
        }
        Op::MatMulT => {
            let (a, b) = (inputs[0], inputs[1]);
            let (n, p, q) = (a.shape()[0], a.shape()[1], b.shape()[0]);
            let da = want(0).then(|| {
                let mut d = vec![0.0; n * p];
                gemm(n, q, p, g.data(), false, b.data(), false, &mut d, 0.0);
                Tensor::from_vec(&[n, p], d)
            });
            let db = want(1).then(|| {
                let mut d = vec![0.0; q * p];
                gemm(q, n, p, g.data(), true, a.data(), false, &mut d, 0.0);
                Tensor::from_vec(&[q, p], d)
            });
            vec![da, db]
        }
        Op::Transpose => vec![Some(transpose(g))],
        Op::Conv2d => {
            let (dx, dk, db) = conv_backward(inputs[0], inputs[1], g, want(0), want(1) || want(2));
            vec![dx, dk, db]
        }
        Op::Relu => {
            let x = inputs[0];
            let data = x
                .data()
                .iter()
                .zip(g.data())
                .map(|(&v, &d)| if v > 0.0 { d } else { 0.0 })
                .collect();
            vec![Some(Tensor::from_vec(x.shape(), data))]
        }
        Op::MaxPool2 => {
            let Aux::Indices(idx) = aux else {
                unreachable!("maxpool without indices")
            };
            let mut d = Tensor::zeros(inputs[0].shape());
            let dd = d.data_mut();
            for (&src, &v) in idx.iter().zip(g.data()) {
                dd[src] += v;
            }
            vec![Some(d)]
        }
        Op::GlobalAvgPool => {
            let x = inputs[0];
            let hw = x.shape()[2] * x.shape()[3];
            let mut data = Vec::with_capacity(x.len());
            for &v in g.data() {
                data.extend(std::iter::repeat_n(v / hw as f64, hw));
            }
            vec![Some(Tensor::from_vec(x.shape(), data))]
        }
        Op::Concat => {
            let n = g.rows();
            let mut offset = 0;
            let total = g.shape()[1];
            inputs
                .iter()
                .enumerate()
                .map(|(j, t)| {
                    let w = t.shape()[1];
                    let r = want(j).then(|| {
                        let mut data = Vec::with_capacity(n * w);
                        for i in 0..n {
                            data.extend_from_slice(&g.data()[i * total + offset..i * total + offset + w]);
                        }
                        Tensor::from_vec(t.shape(), data)
                    });
                    offset += w;
                    r
                })
                .collect()
        }
        Op::Narrow { start, len } => {
            let x = inputs[0];
            let inner: usize = x.shape()[2..].iter().product();
            let c = x.shape()[1];
            let mut d = Tensor::zeros(x.shape());
            let dd = d.data_mut();
            for i in 0..x.rows() {
                let dst = i * c * inner + start * inner;
                let src = i * len * inner;
                dd[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
            }
            vec![Some(d)]
        }
        Op::Add => vec![Some(g.clone()), Some(g.clone())],
        Op::Sub => vec![Some(g.clone()), Some(g.map(|v| -v))],
        Op::Mul => {
            let (a, b) = (inputs[0], inputs[1]);
            let da = want(0).then(|| {
                Tensor::from_vec(a.shape(), g.data().iter().zip(b.data()).map(|(x, y)| x * y).collect())
            });
            let db = want(1).then(|| {
                Tensor::from_vec(b.shape(), g.data().iter().zip(a.data()).map(|(x, y)| x * y).collect())
            });
            vec![da, db]
        }
        Op::Scale(c) => vec![Some(g.map(|v| v * c))],
        Op::RowNorm(kind) => {
            let x = inputs[0];
            let m = x.shape()[1];
            let mut data = Vec::with_capacity(x.len());
            for i in 0..x.rows() {
                let row = x.row(i);
                let start = data.len();
                data.resize(start + m, 0.0);
                norm_grad(*kind, row, out.data()[i], g.data()[i], &mut data[start..]);
            }
            vec![Some(Tensor::from_vec(x.shape(), data))]
        }
        Op::ColMeanAbs => {
            let x = inputs[0];
            let n = x.rows() as f64;
            let m = x.shape()[1];
            let data = x
                .data()
                .iter()
                .enumerate()
                .map(|(idx, &v)| signum0(v) * g.data()[idx % m] / n)
                .collect();
            vec![Some(Tensor::from_vec(x.shape(), data))]
        }
        Op::Norm(kind) => {
            let x = inputs[0];
            let mut d = vec![0.0; x.len()];
            norm_grad(*kind, x.data(), out.item(), g.item(), &mut d);
            vec![Some(Tensor::from_vec(x.shape(), d))]
        }
        Op::Frobenius => {
            let x = inputs[0];
            let mut d = vec![0.0; x.len()];
            norm_grad(NormKind::L2, x.data(), out.item(), g.item(), &mut d);
            vec![Some(Tensor::from_vec(x.shape(), d))]
        }
        Op::Mean => {
            let x = inputs[0];
            vec![Some(Tensor::full(x.shape(), g.item() / x.len() as f64))]
        }
        Op::Sum => vec![Some(Tensor::full(inputs[0].shape(), g.item()))],
        Op::SoftmaxCrossEntropy { labels } => {
            let Aux::Probs(p) = aux else {
                unreachable!("cross-entropy without probabilities")
            };
            let z = inputs[0];
            let (n, k) = (z.shape()[0], z.shape()[1]);
            let scale = g.item() / n as f64;
            let mut d = p.clone();
            if k == 1 {
                for (i, v) in d.iter_mut().enumerate() {
                    *v = (*v - labels[i] as f64) * scale;
                }
            } else {
                for i in 0..n {
                    d[i * k + labels[i]] -= 1.0;
                }
                for v in &mut d {
                    *v *= scale;
                }
            }
            vec![Some(Tensor::from_vec(z.shape(), d))]
        }
        Op::Custom(c) => c.backward(inputs, out, g).into_iter().map(Some).collect(),
    }
}

/// Distance of the current inputs to the nearest point where this op is not
/// differentiable (`None` for smooth ops).
pub(crate) fn kink_distance(op: &Op, inputs: &[&Tensor]) -> Option<f64> {
    match op {
        Op::Relu => Some(min_abs(inputs[0].data())),
        Op::ColMeanAbs => Some(min_abs(inputs[0].data())),
        Op::RowNorm(NormKind::L1) | Op::Norm(NormKind::L1) => Some(min_abs(inputs[0].data())),
        Op::RowNorm(NormKind::Linf) => {
            let x = inputs[0];
            Some((0..x.rows()).map(|i| top_gap(x.row(i))).fold(f64::INFINITY, f64::min))
        }
        Op::Norm(NormKind::Linf) => Some(top_gap(inputs[0].data())),
        Op::MaxPool2 => Some(pool_gap(inputs[0])),
        _ => None,
    }
}

fn min_abs(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).fold(f64::INFINITY, f64::min)
}

/// Gap between largest and second-largest magnitude, together with the
/// distance of the largest from zero.
fn top_gap(v: &[f64]) -> f64 {
    let mut best = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for x in v.iter().map(|x| x.abs()) {
        if x > best {
            second = best;
            best = x;
        } else if x > second {
            second = x;
        }
    }
    let gap = if second.is_finite() { best - second } else { f64::INFINITY };
    gap.min(best)
}

fn pool_gap(x: &Tensor) -> f64 {
    let s = x.shape();
    let (h, w) = (s[2], s[3]);
    let mut gap = f64::INFINITY;
    for plane in x.data().chunks(h * w) {
        for oy in 0..h / 2 {
            for ox in 0..w / 2 {
                let mut vals = [0.0; 4];
                for (j, v) in vals.iter_mut().enumerate() {
                    *v = plane[(2 * oy + j / 2) * w + 2 * ox + j % 2];
                }
                vals.sort_by(|a, b| b.total_cmp(a));
                gap = gap.min(vals[0] - vals[1]);
            }
        }
    }
    gap
}

fn signum0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn norm_of(kind: NormKind, v: &[f64]) -> f64 {
    match kind {
        NormKind::L1 => v.iter().map(|x| x.abs()).sum(),
        NormKind::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
        NormKind::Linf => v.iter().map(|x| x.abs()).fold(0.0, f64::max),
    }
}

/// Index of the first entry of maximal magnitude.
pub(crate) fn argmax_abs(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    best
}

fn norm_grad(kind: NormKind, v: &[f64], value: f64, g: f64, out: &mut [f64]) {
    match kind {
        NormKind::L1 => {
            for (o, &x) in out.iter_mut().zip(v) {
                *o = signum0(x) * g;
            }
        }
        NormKind::L2 => {
            if value > 0.0 {
                for (o, &x) in out.iter_mut().zip(v) {
                    *o = x / value * g;
                }
            }
        }
        NormKind::Linf => {
            if !v.is_empty() {
                let i = argmax_abs(v);
                out[i] = signum0(v[i]) * g;
            }
        }
    }
}

fn softmax_ce(z: &Tensor, labels: &[usize]) -> (f64, Vec<f64>) {
    let (n, k) = (z.shape()[0], z.shape()[1]);
    let mut probs = vec![0.0; n * k];
    let mut total = 0.0;
    for i in 0..n {
        let row = z.row(i);
        if k == 1 {
            // Binary logistic: loss = softplus(-s z), s = ±1.
            let s = if labels[i] == 1 { 1.0 } else { -1.0 };
            let t = -s * row[0];
            total += t.max(0.0) + (-t.abs()).exp().ln_1p();
            probs[i] = 1.0 / (1.0 + (-row[0]).exp());
            continue;
        }
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (p, &v) in probs[i * k..(i + 1) * k].iter_mut().zip(row) {
            *p = (v - mx).exp();
            sum += *p;
        }
        for p in &mut probs[i * k..(i + 1) * k] {
            *p /= sum;
        }
        total += mx + sum.ln() - row[labels[i]];
    }
    (total / n as f64, probs)
}

fn transpose(a: &Tensor) -> Tensor {
    let (r, c) = (a.shape()[0], a.shape()[1]);
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a.data()[i * c + j];
        }
    }
    Tensor::from_vec(&[c, r], out)
}

/// Unrolls 3x3 "same" patches of one image into a `(c*9, h*w)` matrix.
fn im2col(img: &[f64], c: usize, h: usize, w: usize, cols: &mut [f64]) {
    let hw = h * w;
    for ch in 0..c {
        let plane = &img[ch * hw..(ch + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((ch * 9) + ky * 3 + kx) * hw..((ch * 9) + ky * 3 + kx + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    let dst = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    for (x, d) in dst.iter_mut().enumerate() {
                        let sx = x as isize + kx as isize - 1;
                        *d = if sx < 0 || sx >= w as isize { 0.0 } else { src[sx as usize] };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], c: usize, h: usize, w: usize, img: &mut [f64]) {
    let hw = h * w;
    for ch in 0..c {
        let plane = &mut img[ch * hw..(ch + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((ch * 9) + ky * 3 + kx) * hw..((ch * 9) + ky * 3 + kx + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    for x in 0..w {
                        let sx = x as isize + kx as isize - 1;
                        if sx >= 0 && sx < w as isize {
                            dst[sx as usize] += row[y * w + x];
                        }
                    }
                }
            }
        }
    }
}

fn conv_forward(x: &Tensor, k: &Tensor, b: &Tensor) -> Tensor {
    let s = x.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let o = k.shape()[0];
    let hw = h * w;
    let mut cols = vec![0.0; c * 9 * hw];
    let mut out = vec![0.0; n * o * hw];
    for i in 0..n {
        im2col(&x.data()[i * c * hw..(i + 1) * c * hw], c, h, w, &mut cols);
        let dst = &mut out[i * o * hw..(i + 1) * o * hw];
        for (oc, plane) in dst.chunks_mut(hw).enumerate() {
            plane.fill(b.data()[oc]);
        }
        gemm(o, c * 9, hw, k.data(), false, &cols, false, dst, 1.0);
    }
    Tensor::from_vec(&[n, o, h, w], out)
}

type ConvGrads = (Option<Tensor>, Option<Tensor>, Option<Tensor>);

fn conv_backward(x: &Tensor, k: &Tensor, g: &Tensor, need_x: bool, need_k: bool) -> ConvGrads {
    let s = x.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let o = k.shape()[0];
    let hw = h * w;
    let mut cols = vec![0.0; c * 9 * hw];
    let mut dcols = vec![0.0; c * 9 * hw];
    let mut dk = vec![0.0; o * c * 9];
    let mut db = vec![0.0; o];
    let mut dx = if need_x { vec![0.0; x.len()] } else { Vec::new() };
    for i in 0..n {
        let gi = &g.data()[i * o * hw..(i + 1) * o * hw];
        if need_k {
            im2col(&x.data()[i * c * hw..(i + 1) * c * hw], c, h, w, &mut cols);
            gemm(o, hw, c * 9, gi, false, &cols, true, &mut dk, 1.0);
            for (oc, plane) in gi.chunks(hw).enumerate() {
                db[oc] += plane.iter().sum::<f64>();
            }
        }
        if need_x {
            gemm(c * 9, o, hw, k.data(), true, gi, false, &mut dcols, 0.0);
            col2im(&dcols, c, h, w, &mut dx[i * c * hw..(i + 1) * c * hw]);
        }
    }
    (
        need_x.then(|| Tensor::from_vec(s, dx)),
        need_k.then(|| Tensor::from_vec(k.shape(), dk)),
        need_k.then(|| Tensor::vector(db)),
    )
}

fn maxpool_forward(x: &Tensor) -> (Tensor, Vec<usize>) {
    let s = x.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut idx = Vec::with_capacity(n * c * oh * ow);
    for p in 0..n * c {
        let base = p * h * w;
        let plane = &x.data()[base..base + h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = (2 * oy) * w + 2 * ox;
                for j in 1..4 {
                    let cand = (2 * oy + j / 2) * w + 2 * ox + j % 2;
                    if plane[cand] > plane[best] {
                        best = cand;
                    }
                }
                out.push(plane[best]);
                idx.push(base + best);
            }
        }
    }
    (Tensor::from_vec(&[n, c, oh, ow], out), idx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(op: Op, inputs: &[&Tensor]) -> Tensor {
        forward(&op, inputs).unwrap().0
    }

    #[test]
    fn relu_clamps_negatives() {
        let x = Tensor::vector(vec![-1.0, 0.0, 2.0]);
        assert_eq!(run(Op::Relu, &[&x]).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn gap_of_constant_map() {
        let x = Tensor::full(&[1, 1, 4, 4], 1.0);
        let y = run(Op::GlobalAvgPool, &[&x]);
        assert_eq!(y.shape(), &[1, 1]);
        assert_eq!(y.item(), 1.0);
    }

    #[test]
    fn uniform_logits_give_ln2() {
        let z = Tensor::matrix(1, 2, vec![0.0, 0.0]);
        let op = Op::SoftmaxCrossEntropy { labels: Arc::from(vec![0usize]) };
        assert!((run(op, &[&z]).item() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn conv_identity_kernel_copies_input() {
        let x = Tensor::from_vec(&[1, 1, 3, 3], (0..9).map(f64::from).collect());
        let mut k = Tensor::zeros(&[1, 1, 3, 3]);
        k.data_mut()[4] = 1.0;
        let b = Tensor::vector(vec![0.5]);
        let y = run(Op::Conv2d, &[&x, &k, &b]);
        let expected: Vec<f64> = (0..9).map(|v| f64::from(v) + 0.5).collect();
        assert_eq!(y.data(), expected.as_slice());
    }

    #[test]
    fn conv_zero_padding_at_border() {
        let x = Tensor::full(&[1, 1, 2, 2], 1.0);
        let k = Tensor::full(&[1, 1, 3, 3], 1.0);
        let b = Tensor::vector(vec![0.0]);
        // every output sees exactly the 4 in-bounds ones
        assert_eq!(run(Op::Conv2d, &[&x, &k, &b]).data(), &[4.0; 4]);
    }

    #[test]
    fn maxpool_picks_window_max() {
        let x = Tensor::from_vec(&[1, 1, 2, 4], vec![1., 5., 2., 0., 3., 4., 9., 8.]);
        let y = run(Op::MaxPool2, &[&x]);
        assert_eq!(y.data(), &[5.0, 9.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        let err = forward(&Op::MatMul, &[&a, &b]).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn unknown_op_name_rejected() {
        assert!("softmax".parse::<OpKind>().is_err());
        assert_eq!("conv2d".parse::<OpKind>().unwrap(), OpKind::Conv2d);
    }

    #[test]
    fn linf_gradient_goes_to_first_max() {
        let mut d = vec![0.0; 3];
        norm_grad(NormKind::Linf, &[2.0, -2.0, 1.0], 2.0, 1.0, &mut d);
        assert_eq!(d, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn binary_logistic_matches_softplus() {
        let z = Tensor::matrix(2, 1, vec![0.3, -1.2]);
        let op = Op::SoftmaxCrossEntropy { labels: Arc::from(vec![1usize, 1]) };
        let want = ((1.0 + (-0.3f64).exp()).ln() + (1.0 + 1.2f64.exp()).ln()) / 2.0;
        assert!((run(op, &[&z]).item() - want).abs() < 1e-14);
    }
}
