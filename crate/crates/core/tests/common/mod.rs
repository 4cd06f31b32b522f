//! Oracles and fixtures shared by the integration test targets.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sblab::grad::{Graph, NodeId, NormKind, OpKind, Tensor};
use sblab::nets::{DecoderKind, ExtractorSpec, Model};
use sblab::objectives::{phase_loss, LossWeights, NormVariant};
use sblab::phase::Phase;

/// Exhaustive active-set oracle: every subset S gives the min-norm w with
/// z_i . w = 1 on S; the smallest feasible one is the hard-margin solution.
pub fn brute_force_max_margin(x: &Tensor, y: &[f64]) -> Option<Vec<f64>> {
    let n = x.rows();
    let dim = x.row_len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << n) {
        let idx: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let z = DMatrix::from_fn(idx.len(), dim, |r, c| x.row(idx[r])[c] * y[idx[r]]);
        let ones = DVector::from_element(idx.len(), 1.0);
        let Ok(pinv) = z.clone().pseudo_inverse(1e-12) else { continue };
        let w = &pinv * &ones;
        if (&z * &w - &ones).amax() > 1e-9 {
            continue;
        }
        let feasible = (0..n).all(|i| {
            let m: f64 = (0..dim).map(|c| x.row(i)[c] * y[i] * w[c]).sum();
            m >= 1.0 - 1e-9
        });
        if feasible {
            let norm = w.norm();
            if best.as_ref().is_none_or(|(b, _)| norm < *b) {
                best = Some((norm, w.iter().copied().collect()));
            }
        }
    }
    best.map(|(_, w)| w)
}

pub fn random_separable(rng: &mut ChaCha8Rng) -> (Tensor, Vec<f64>) {
    let n = rng.random_range(2..=6);
    let dim = rng.random_range(1..=3);
    let mut truth: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = truth.iter().map(|t| t * t).sum::<f64>().sqrt().max(1e-3);
    truth.iter_mut().for_each(|t| *t /= norm);
    let mut data = Vec::new();
    let mut y = Vec::new();
    while y.len() < n {
        let p: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let s: f64 = p.iter().zip(&truth).map(|(a, b)| a * b).sum();
        if s.abs() > 0.05 {
            y.push(s.signum());
            data.extend(p);
        }
    }
    (Tensor::from_vec(&[n, dim], data), y)
}

/// Values bounded away from zero so ReLU and abs kinks stay out of reach.
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let mag = rng.random_range(0.2..1.0);
            if rng.random_bool(0.5) { mag } else { -mag }
        })
        .collect();
    Tensor::from_vec(shape, data)
}

/// Reduces any output to a scalar with fixed random weights, so every output
/// coordinate contributes a distinct upstream gradient.
pub fn weighted_sum(g: &mut Graph, out: NodeId, rng: &mut ChaCha8Rng) -> NodeId {
    let shape = g.value(out).shape().to_vec();
    let c = g.constant(away_from_zero(rng, &shape));
    let m = g.mul(out, c).unwrap();
    g.sum(m).unwrap()
}

pub fn build(kind: OpKind, seed: u64) -> (Graph, NodeId) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Graph::new();
    let mut p = |g: &mut Graph, shape: &[usize]| g.param(away_from_zero(&mut rng, shape));
    let out = match kind {
        OpKind::Linear => {
            let (x, w, b) = (p(&mut g, &[3, 4]), p(&mut g, &[4, 2]), p(&mut g, &[2]));
            g.linear(x, w, b)
        }
        OpKind::MatMul => {
            let (a, b) = (p(&mut g, &[3, 4]), p(&mut g, &[4, 2]));
            g.matmul(a, b)
        }
        OpKind::MatMulT => {
            let (a, b) = (p(&mut g, &[3, 4]), p(&mut g, &[2, 4]));
            g.matmul_t(a, b)
        }
        OpKind::Transpose => {
            let a = p(&mut g, &[3, 5]);
            g.transpose(a)
        }
        OpKind::Conv2d => {
            let (x, k, b) = (p(&mut g, &[2, 2, 4, 5]), p(&mut g, &[3, 2, 3, 3]), p(&mut g, &[3]));
            g.conv2d(x, k, b)
        }
        OpKind::Relu => {
            let x = p(&mut g, &[4, 3]);
            g.relu(x)
        }
        OpKind::MaxPool2 => {
            let x = p(&mut g, &[2, 2, 4, 5]);
            g.maxpool2(x)
        }
        OpKind::GlobalAvgPool => {
            let x = p(&mut g, &[2, 3, 4, 4]);
            g.global_avg_pool(x)
        }
        OpKind::Concat => {
            let (a, b) = (p(&mut g, &[3, 2]), p(&mut g, &[3, 4]));
            g.concat(&[a, b])
        }
        OpKind::Narrow => {
            let x = p(&mut g, &[3, 6]);
            g.narrow(x, 1, 3)
        }
        OpKind::Add => {
            let (a, b) = (p(&mut g, &[3, 4]), p(&mut g, &[3, 4]));
            g.add(a, b)
        }
        OpKind::Sub => {
            let (a, b) = (p(&mut g, &[3, 4]), p(&mut g, &[3, 4]));
            g.sub(a, b)
        }
        OpKind::Mul => {
            let (a, b) = (p(&mut g, &[3, 4]), p(&mut g, &[3, 4]));
            g.mul(a, b)
        }
        OpKind::Scale => {
            let a = p(&mut g, &[3, 4]);
            g.scale(a, -1.7)
        }
        OpKind::RowNorm => {
            let x = p(&mut g, &[4, 5]);
            let parts: Vec<NodeId> =
                [NormKind::L1, NormKind::L2, NormKind::Linf].into_iter().map(|k| g.row_norm(x, k).unwrap()).collect();
            let s = g.add(parts[0], parts[1]).unwrap();
            g.add(s, parts[2])
        }
        OpKind::ColMeanAbs => {
            let x = p(&mut g, &[5, 3]);
            g.col_mean_abs(x)
        }
        OpKind::Norm => {
            let x = p(&mut g, &[4, 3]);
            let parts: Vec<NodeId> =
                [NormKind::L1, NormKind::L2, NormKind::Linf].into_iter().map(|k| g.norm(x, k).unwrap()).collect();
            let s = g.add(parts[0], parts[1]).unwrap();
            g.add(s, parts[2])
        }
        OpKind::Mean => {
            let x = p(&mut g, &[4, 3]);
            g.mean(x)
        }
        OpKind::Sum => {
            let x = p(&mut g, &[4, 3]);
            g.sum(x)
        }
        OpKind::SoftmaxCrossEntropy => {
            let multi = p(&mut g, &[5, 3]);
            let binary = p(&mut g, &[5, 1]);
            let a = g.softmax_cross_entropy(multi, &[0, 2, 1, 1, 0]).unwrap();
            let b = g.softmax_cross_entropy(binary, &[1, 0, 0, 1, 1]).unwrap();
            g.add(a, b)
        }
        OpKind::Frobenius => {
            let x = p(&mut g, &[3, 4]);
            g.frobenius(x)
        }
    }
    .unwrap();
    let root = weighted_sum(&mut g, out, &mut rng);
    (g, root)
}

pub fn tiny_model(decoder: DecoderKind, classes: usize) -> Model {
    Model::new(&ExtractorSpec::Mlp { widths: vec![4, 6, 5] }, classes, decoder, 11).unwrap()
}

pub fn composite(phase: Phase, variant: NormVariant, decoder: DecoderKind, classes: usize) -> (Graph, NodeId) {
    let mut model = tiny_model(decoder, classes);
    model.set_phase_partition(phase);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = away_from_zero(&mut rng, &[6, 4]);
    let labels: Vec<usize> = (0..6).map(|i| i % classes.max(2)).collect();
    let mut g = Graph::new();
    let out = model.forward(&mut g, &x).unwrap();
    let loss = phase_loss(&mut g, &out, &labels, phase, LossWeights { lambda_L: 0.7, lambda_FLFT: 0.4 }, variant).unwrap();
    (g, loss.total)
}
