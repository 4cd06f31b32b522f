use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sblab::grad::Tensor;
use sblab::theory::*;

mod common;
use common::{brute_force_max_margin, random_separable};

#[test]
fn max_margin_matches_exhaustive_oracle_on_100_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..100 {
        let (x, y) = random_separable(&mut rng);
        let oracle = brute_force_max_margin(&x, &y).expect("separable instance");
        let got = max_margin_solve(&x, &y, QpOptions::default()).unwrap();
        for (a, b) in got.w.iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-6, "case {case}: {:?} vs {:?}", got.w, oracle);
        }
    }
}

#[test]
fn uniform_coordinates_under_replication() {
    let train = sample_toy(&ToyDistribution::default(), 500, 3, true);
    for d in [1usize, 2, 5, 20] {
        let ds = replicate(&train, ReplicationMap::new(d, Axis::First)).unwrap();
        let s = max_margin_solve(&ds.inputs, &ds.signed_labels(), QpOptions::default()).unwrap();
        for &c in &s.w {
            assert!((c - 2.0 / (d as f64 + 1.0)).abs() < 1e-3, "d={d}: {:?}", s.w);
        }
        assert!(s.duality_gap <= 1e-8);
    }
    let s = max_margin_solve(&train.inputs, &train.signed_labels(), QpOptions::default()).unwrap();
    assert!((s.w[0] - 1.0).abs() < 1e-3 && (s.w[1] - 1.0).abs() < 1e-3);
}

#[test]
fn kkt_active_set_spans_solution() {
    let train = sample_toy(&ToyDistribution::default(), 200, 5, true);
    let ds = replicate(&train, ReplicationMap::new(3, Axis::Second)).unwrap();
    let y = ds.signed_labels();
    let s = max_margin_solve(&ds.inputs, &y, QpOptions::default()).unwrap();
    assert!(!s.active_set.is_empty());
    for i in 0..ds.len() {
        let m: f64 = ds.inputs.row(i).iter().zip(&s.w).map(|(a, b)| a * b).sum::<f64>() * y[i];
        assert!(m >= 1.0 - 1e-6);
    }
    // Nonnegative least squares on the active set reproduces w.
    let z = Tensor::from_vec(
        &[s.active_set.len(), s.w.len()],
        s.active_set
            .iter()
            .flat_map(|&i| ds.inputs.row(i).iter().map(|v| v * y[i]).collect::<Vec<_>>())
            .collect(),
    );
    let zt = DMatrix::from_row_slice(z.rows(), z.row_len(), z.data()).transpose();
    let coef = zt.clone().pseudo_inverse(1e-12).unwrap() * DVector::from_column_slice(&s.w);
    let recon = &zt * &coef;
    assert!((recon - DVector::from_column_slice(&s.w)).amax() < 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn scale_equivariance(c in 0.2f64..5.0, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, y) = random_separable(&mut rng);
        let a = max_margin_solve(&x, &y, QpOptions::default()).unwrap();
        let b = max_margin_solve(&x.map(|v| v * c), &y, QpOptions::default()).unwrap();
        for (p, q) in a.w.iter().zip(&b.w) {
            prop_assert!((p / c - q).abs() <= 1e-6 * (1.0 + p.abs() / c));
        }
    }

    #[test]
    fn projection_preserves_inner_products(
        w in proptest::collection::vec(-2.0f64..2.0, 6),
        x in proptest::array::uniform2(-2.0f64..2.0),
        second in any::<bool>(),
    ) {
        let map = ReplicationMap::new(5, if second { Axis::Second } else { Axis::First });
        let p = projected_classifier(&w, map).unwrap();
        let xt = map.apply(x);
        let lhs = p[0] * x[0] + p[1] * x[1];
        let rhs: f64 = w.iter().zip(&xt).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn population_loss_is_symmetric(a in -3.0f64..3.0, b in 0.01f64..3.0) {
        prop_assert_eq!(frr_population_loss(a, b).unwrap(), frr_population_loss(b, a).unwrap());
    }
}

#[test]
fn toy_support_and_means() {
    let ds = sample_toy(&ToyDistribution::default(), 500, 1, false);
    let mut mean = [0.0; 2];
    for i in 0..ds.len() {
        let x = ds.inputs.row(i);
        let y = if ds.labels[i] == 1 { 1.0 } else { -1.0 };
        assert!((x[0] - y).abs() <= 0.5 && (x[1] - y).abs() <= 0.5);
        if ds.labels[i] == 1 {
            mean[0] += x[0] / 500.0;
            mean[1] += x[1] / 500.0;
        }
    }
    assert!((mean[0] - 1.0).abs() < 0.05 && (mean[1] - 1.0).abs() < 0.05);

    let ood = sample_toy_ood(2000, 2);
    let mut second = 0.0;
    for i in 0..ood.len() {
        let x = ood.inputs.row(i);
        if ood.labels[i] == 1 {
            assert!((0.5..=1.5).contains(&x[0]));
        }
        second += x[1] / ood.len() as f64;
    }
    assert!(second.abs() < 0.02);
}

#[test]
fn optimal_decoder_matches_regression_oracle() {
    let ds = sample_toy(&ToyDistribution::default(), 500_000, 9, false);
    let phi = optimal_linear_decoder(&[1.0, 1.0], &ds.inputs).unwrap();
    // Independent oracle: per-coordinate regression of x_i on s, solved with
    // nalgebra's least squares on a fresh sample.
    let fresh = sample_toy(&ToyDistribution::default(), 100_000, 10, false);
    let n = fresh.len();
    let s = DMatrix::from_fn(n, 1, |r, _| fresh.inputs.row(r)[0] + fresh.inputs.row(r)[1]);
    for i in 0..2 {
        let target = DVector::from_fn(n, |r, _| fresh.inputs.row(r)[i]);
        let coef = s.clone().svd(true, true).solve(&target, 1e-12).unwrap();
        assert!((coef[0] - phi[i]).abs() < 1e-2, "{} vs {}", coef[0], phi[i]);
    }
    let e1 = optimal_linear_decoder(&[1.0, 0.0], &Tensor::matrix(2, 2, vec![1.0, 0.0, 2.0, 0.0])).unwrap();
    assert_eq!(e1[0], 1.0);
}

#[test]
fn frr_program_equalizes_groups() {
    for (d, seed) in [(0usize, 0u64), (1, 1), (5, 2), (5, 3)] {
        let map = ReplicationMap::new(d, Axis::First);
        let ds = replicate(&sample_toy(&ToyDistribution::default(), 100_000, seed, true), map).unwrap();
        let sol = frr_constrained_solve(&ds.inputs, &ds.signed_labels(), FrrOptions::default()).unwrap();
        let r = group_equality_residual(&sol.w, map).unwrap();
        let p = projected_classifier(&sol.w, map).unwrap();
        let angle = (p[1].atan2(p[0]) - std::f64::consts::FRAC_PI_4).abs().to_degrees();
        assert!(r <= 1e-2, "d={d}: residual {r}, w={:?}", sol.w);
        assert!(angle <= 1.0, "d={d}: angle {angle}");
        assert!(sol.converged);
    }
}

#[test]
fn expected_max_ordering_agrees() {
    let map = ReplicationMap::new(5, Axis::First);
    let ds = replicate(&sample_toy(&ToyDistribution::default(), 10_000, 4, false), map).unwrap();
    let a = frr_constrained_solve(&ds.inputs, &ds.signed_labels(), FrrOptions::default()).unwrap();
    let b = frr_expected_max_solve(&ds.inputs, 1500, 0.02).unwrap();
    let pa = projected_classifier(&a.w, map).unwrap();
    let pb = projected_classifier(&b.w, map).unwrap();
    let angle = (pa[1].atan2(pa[0]) - pb[1].atan2(pb[0])).abs().to_degrees();
    assert!(angle <= 1.0, "max-of-means {pa:?} vs mean-of-max {pb:?}");
}

#[test]
fn moment_audit_exposes_cross_term() {
    let mut w = vec![0.1; 6];
    w[5] = 1.0;
    let a = moment_audit(5, &w, 200_000, 1).unwrap();
    assert!(a.max_gap_expanded < 0.02);
    assert!(a.max_gap_printed > 0.4);
}
