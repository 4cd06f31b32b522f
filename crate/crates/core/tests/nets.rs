use proptest::prelude::*;

use sblab::datasets::LabeledDataset;
use sblab::grad::{Graph, Tensor};
use sblab::nets::{build_extractor, CnnSpec, DecoderKind, ExtractorSpec, Model, ParamGroup};
use sblab::phase::Phase;
use sblab::pipeline::{optimize, PhaseConfig};

fn cnn(in_channels: usize, channels: Vec<usize>) -> CnnSpec {
    CnnSpec { in_channels, height: 6, width: 6, channels, pools: 1 }
}

#[test]
fn dual_branches_are_separable() {
    let spec = ExtractorSpec::DualCnn { simple: cnn(1, vec![3, 4]), complex: cnn(2, vec![5]) };
    let model = Model::new(&spec, 3, DecoderKind::Linear, 0).unwrap();
    let n = 4;
    let x: Vec<f64> = (0..n * 3 * 36).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect();
    let base = model.extract_features(&Tensor::from_vec(&[n, 3, 6, 6], x.clone()), 8).unwrap();
    for (zero, changed) in [(0..36, 0..4), (36..108, 4..9)] {
        let mut z = x.clone();
        for i in 0..n {
            z[i * 108..(i + 1) * 108][zero.clone()].fill(0.0);
        }
        let f = model.extract_features(&Tensor::from_vec(&[n, 3, 6, 6], z), 8).unwrap();
        let mut moved = false;
        for i in 0..n {
            for j in 0..9 {
                let same = f.row(i)[j].to_bits() == base.row(i)[j].to_bits();
                if changed.contains(&j) {
                    moved |= !same;
                } else {
                    assert!(same, "sample {i}: feature {j} outside the zeroed branch moved");
                }
            }
        }
        assert!(moved, "zeroing a branch must change its own features");
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[test]
fn first_erm_step_moves_every_parameter_by_the_learning_rate() {
    // features = a x + c, logit = w * features; mean logistic loss.
    let mut model = Model::new(&ExtractorSpec::Mlp { widths: vec![1, 1] }, 1, DecoderKind::Linear, 0).unwrap();
    let (a, c, w) = (0.8, -0.3, 0.6);
    model.extractor.params[0].value = Tensor::from_vec(&[1, 1], vec![a]);
    model.extractor.params[1].value = Tensor::vector(vec![c]);
    model.head.weight.value = Tensor::from_vec(&[1, 1], vec![w]);
    let xs = [1.5, -0.5, 2.0, -1.0];
    let ys = [1usize, 0, 1, 0];
    let data = LabeledDataset::new(Tensor::from_vec(&[4, 1], xs.to_vec()), ys.to_vec(), 2, None).unwrap();

    let (mut ga, mut gc, mut gw) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(&ys) {
        let f = a * x + c;
        let r = (sigmoid(w * f) - y as f64) / 4.0;
        ga += r * w * x;
        gc += r * w;
        gw += r * f;
    }
    let lr = 0.01;
    let mut cfg = PhaseConfig::new(Phase::Erm, 1, lr);
    cfg.batch_size = 4;
    optimize(&mut model, &data, &cfg).unwrap();
    // A bias-corrected first Adam step is lr * g / (|g| + eps).
    let step = |g: f64| lr * g / (g.abs() + 1e-8);
    let got = [model.extractor.params[0].value.data()[0], model.extractor.params[1].value.data()[0], model.head.weight.value.data()[0]];
    let want = [a - step(ga), c - step(gc), w - step(gw)];
    for (g, e) in got.iter().zip(want) {
        assert!((g - e).abs() < 1e-9, "{got:?} vs {want:?}");
    }
}

#[test]
fn phase_partitions_cover_every_group() {
    let mut trained = std::collections::BTreeSet::new();
    let mut model = Model::new(&ExtractorSpec::Mlp { widths: vec![2, 3] }, 2, DecoderKind::Linear, 0).unwrap();
    for phase in [Phase::Erm, Phase::FrrL, Phase::FrrFlft] {
        model.set_phase_partition(phase);
        for p in model.params() {
            if p.trainable {
                trained.insert(format!("{:?}", p.group));
            }
        }
    }
    let all: std::collections::BTreeSet<String> =
        [ParamGroup::Extractor, ParamGroup::Head, ParamGroup::Decoder].iter().map(|g| format!("{g:?}")).collect();
    assert_eq!(trained, all);
}

#[test]
fn shared_decoder_matches_direct_multiply() {
    let model = Model::new(&ExtractorSpec::Mlp { widths: vec![3, 5] }, 2, DecoderKind::Shared, 4).unwrap();
    let x = Tensor::from_vec(&[2, 3], vec![0.3, -1.0, 2.0, 1.5, 0.2, -0.7]);
    let mut g = Graph::new();
    let out = model.forward(&mut g, &x).unwrap();
    let logits = g.value(out.logits).clone();
    let recon = g.value(out.reconstruction).clone();
    let w = model.head.weight.value.data();
    for i in 0..2 {
        for j in 0..5 {
            let direct: f64 = (0..2).map(|c| w[j * 2 + c] * logits.row(i)[c]).sum();
            assert!((direct - recon.row(i)[j]).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn forward_shapes_follow_the_spec(batch in 1usize..6, k in 1usize..4, seed in 0u64..1000, use_cnn: bool) {
        let spec = if use_cnn {
            ExtractorSpec::Cnn(cnn(2, vec![3, 4]))
        } else {
            ExtractorSpec::Mlp { widths: vec![7, 5, 4] }
        };
        let model = Model::new(&spec, k, DecoderKind::Deeper, seed).unwrap();
        let shape: Vec<usize> = std::iter::once(batch).chain(spec.input_shape()).collect();
        let n: usize = shape.iter().product();
        let x = Tensor::from_vec(&shape, (0..n).map(|i| (i as f64 * 0.37).sin()).collect());
        let mut g = Graph::new();
        let out = model.forward(&mut g, &x).unwrap();
        prop_assert_eq!(g.value(out.features).shape(), &[batch, 4]);
        prop_assert_eq!(g.value(out.logits).shape(), &[batch, k]);
        prop_assert_eq!(g.value(out.reconstruction).shape(), &[batch, 4]);
    }

    #[test]
    fn seeded_initialization_is_deterministic(seed: u64) {
        let spec = ExtractorSpec::Cnn(cnn(1, vec![2]));
        prop_assert_eq!(build_extractor(&spec, seed).unwrap(), build_extractor(&spec, seed).unwrap());
        let a = Model::new(&spec, 2, DecoderKind::Linear, seed).unwrap();
        let b = Model::new(&spec, 2, DecoderKind::Linear, seed).unwrap();
        prop_assert_eq!(a, b);
    }
}
