use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sblab::datasets::{digit_source, make_colored_mnist, LabeledDataset, SourceConfig, Split};
use sblab::grad::{Graph, Tensor};
use sblab::nets::{CnnSpec, DecoderKind, ExtractorSpec, Model, ParamGroup};
use sblab::objectives::{LossWeights, NormVariant};
use sblab::optim::{Adam, AdamConfig};
use sblab::phase::Phase;
use sblab::pipeline::{
    accuracy, optimize, run_algorithm1, sample_loguniform, sweep, sweep_phase, Algorithm1, ConcatLab, LabConfig, PhaseConfig,
    SearchSpace,
};
use sblab::theory::{
    projected_classifier, replicate, sample_toy, sample_toy_ood, verify_theory, Axis, ReplicationMap, ToyDistribution,
    VerifyOptions,
};

#[test]
fn adam_solves_a_convex_quadratic() {
    let mut w = vec![0.0];
    let mut adam = Adam::new(AdamConfig::new(0.05));
    for _ in 0..3000 {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(w.clone()));
        let three = g.constant(Tensor::vector(vec![3.0]));
        let d = g.sub(x, three).unwrap();
        let sq = g.mul(d, d).unwrap();
        let half = g.scale(sq, 0.5).unwrap();
        let loss = g.sum(half).unwrap();
        let grads = g.gradients(loss).unwrap();
        adam.tick();
        adam.update(0, &mut w, grads[&x].data());
    }
    assert!((w[0] - 3.0).abs() < 1e-3, "{}", w[0]);
}

fn small_colored(per_class: usize, seed: u64) -> LabeledDataset {
    make_colored_mnist(&digit_source(SourceConfig::new(per_class, 8, seed)), Split::Train, seed + 1).unwrap()
}

fn small_model(seed: u64) -> Model {
    let spec = ExtractorSpec::Cnn(CnnSpec { in_channels: 3, height: 8, width: 8, channels: vec![4, 8], pools: 1 });
    Model::new(&spec, 1, DecoderKind::Linear, seed).unwrap()
}

#[test]
fn head_phases_leave_the_extractor_bitwise_unchanged() {
    let data = small_colored(20, 0);
    for phase in [Phase::FrrL, Phase::ErmL, Phase::FullRankL] {
        let mut m = small_model(1);
        let before = m.group_checksum(ParamGroup::Extractor);
        let head = m.group_checksum(ParamGroup::Head);
        let mut cfg = PhaseConfig::new(phase, 100, 1e-2);
        cfg.weights.lambda_L = 1.0;
        let out = optimize(&mut m, &data, &cfg).unwrap();
        assert_eq!(m.group_checksum(ParamGroup::Extractor), before, "{phase}");
        assert_ne!(m.group_checksum(ParamGroup::Head), head, "{phase}");
        assert!(out.audits.iter().all(|a| a.ok()));
    }
}

#[test]
fn linear_finetune_leaves_head_and_decoder_unchanged() {
    let data = small_colored(20, 2);
    for phase in [Phase::FrrFlft, Phase::ErmFlft] {
        let mut m = small_model(3);
        let (w, phi, theta) = (
            m.group_checksum(ParamGroup::Head),
            m.group_checksum(ParamGroup::Decoder),
            m.group_checksum(ParamGroup::Extractor),
        );
        let mut cfg = PhaseConfig::new(phase, 50, 1e-3);
        cfg.weights.lambda_FLFT = 1.0;
        optimize(&mut m, &data, &cfg).unwrap();
        assert_eq!(m.group_checksum(ParamGroup::Head), w);
        assert_eq!(m.group_checksum(ParamGroup::Decoder), phi);
        assert_ne!(m.group_checksum(ParamGroup::Extractor), theta);
    }
}

#[test]
fn toy_frr_l_recovers_the_constrained_direction() {
    let d = 5;
    let map = ReplicationMap::new(d, Axis::Second);
    let train = replicate(&sample_toy(&ToyDistribution::default(), 500, 1, true), map).unwrap();
    let ood = replicate(&sample_toy_ood(5000, 2), map).unwrap();
    let m = d + 1;
    let mut model = Model::new(&ExtractorSpec::Mlp { widths: vec![m, m] }, 1, DecoderKind::Linear, 0).unwrap();
    for p in &mut model.extractor.params {
        let v = p.value.data_mut();
        v.fill(0.0);
        if p.name.ends_with("weight") {
            (0..m).for_each(|i| v[i * m + i] = 1.0);
        }
    }
    model.reinit_head(3);
    let mut cfg = PhaseConfig::new(Phase::FrrL, 3000, 1e-2);
    cfg.weights = LossWeights { lambda_L: 10.0, lambda_FLFT: 0.0 };
    optimize(&mut model, &train, &cfg).unwrap();
    let w = model.head.weight.value.data().to_vec();
    let learned = projected_classifier(&w, map).unwrap();

    let report = verify_theory(&VerifyOptions { d_list: vec![d], axes: vec![Axis::Second], ..VerifyOptions::default() }).unwrap();
    let theory = report.find(d, Axis::Second, "frr").unwrap().w_proj;
    let angle = |p: [f64; 2]| p[1].atan2(p[0]).to_degrees();
    assert!((angle(learned) - angle(theory)).abs() < 5.0, "learned {:.2} deg, theory {:.2} deg", angle(learned), angle(theory));
    assert!(accuracy(&model, &ood).unwrap() > 99.0);
}

#[test]
fn erm_loss_moving_average_decreases_on_separable_data() {
    let train = sample_toy(&ToyDistribution::default(), 100, 4, false);
    let mut model = Model::new(&ExtractorSpec::Mlp { widths: vec![2, 8, 4] }, 1, DecoderKind::Linear, 5).unwrap();
    let mut cfg = PhaseConfig::new(Phase::Erm, 3000, 1e-2);
    cfg.batch_size = train.len();
    let trace = optimize(&mut model, &train, &cfg).unwrap().loss_trace;
    let avg: Vec<f64> = trace.windows(50).map(|w| w.iter().sum::<f64>() / 50.0).collect();
    let end = avg.iter().position(|&v| v < 1e-3).expect("loss falls below 1e-3");
    for (i, pair) in avg[..=end].windows(2).enumerate() {
        assert!(pair[1] < pair[0], "moving average rose at step {}: {} -> {}", i + 50, pair[0], pair[1]);
    }
}

#[test]
fn training_is_bitwise_reproducible() {
    let data = small_colored(15, 6);
    let run = || {
        let mut m = small_model(7);
        let mut cfg = PhaseConfig::new(Phase::FrrFt, 30, 1e-3);
        cfg.weights.lambda_FLFT = 0.5;
        let out = optimize(&mut m, &data, &cfg).unwrap();
        (GROUPS.map(|g| m.group_checksum(g)), out.loss_trace.iter().map(|v| v.to_bits()).collect::<Vec<_>>())
    };
    assert_eq!(run(), run());
}

const GROUPS: [ParamGroup; 3] = [ParamGroup::Extractor, ParamGroup::Head, ParamGroup::Decoder];

fn algorithm1(lambda: f64) -> Algorithm1 {
    let mut linear = PhaseConfig::new(Phase::FrrL, 40, 1e-2);
    linear.weights.lambda_L = lambda;
    let mut finetune = PhaseConfig::new(Phase::FrrFlft, 40, 1e-3);
    finetune.weights.lambda_FLFT = lambda;
    Algorithm1 { erm: PhaseConfig::new(Phase::Erm, 60, 2e-3), linear, finetune }
}

#[test]
fn zero_weights_reduce_to_plain_retraining() {
    let data = small_colored(15, 8);
    let cfg = algorithm1(0.0);
    let (frr, record) = run_algorithm1(small_model(9), &cfg, &data, &[("train", &data)], None).unwrap();

    let mut plain = small_model(9);
    optimize(&mut plain, &data, &cfg.erm).unwrap();
    plain.reinit_head(cfg.linear.seed.wrapping_add(101));
    optimize(&mut plain, &data, &PhaseConfig { phase: Phase::ErmL, ..cfg.linear.clone() }).unwrap();
    optimize(&mut plain, &data, &PhaseConfig { phase: Phase::ErmFlft, ..cfg.finetune.clone() }).unwrap();

    for g in [ParamGroup::Extractor, ParamGroup::Head] {
        assert_eq!(frr.group_checksum(g), plain.group_checksum(g), "{g:?}");
    }
    assert_eq!(record.phases, vec![Phase::Erm, Phase::FrrL, Phase::FrrFlft]);
}

#[test]
fn head_is_frozen_through_the_final_phase() {
    let data = small_colored(15, 10);
    let dir = tempfile::tempdir().unwrap();
    let (model, record) = run_algorithm1(small_model(11), &algorithm1(1.0), &data, &[], Some(dir.path())).unwrap();
    let flft = &record.outcomes[2];
    let head = flft.audits.iter().find(|a| a.group == ParamGroup::Head).unwrap();
    assert!(!head.trained && head.before == head.after);
    assert_eq!(head.after, model.group_checksum(ParamGroup::Head));
    let (after_frr_l, _) = sblab::checkpoint::load_model(&record.checkpoints[1]).unwrap();
    assert_eq!(after_frr_l.group_checksum(ParamGroup::Head), model.group_checksum(ParamGroup::Head));
    assert!(record.outcomes.iter().flat_map(|o| &o.audits).all(|a| a.ok()));
}

#[test]
fn loguniform_samples_are_uniform_in_log_space() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut u: Vec<f64> = (0..1000).map(|_| (sample_loguniform(&mut rng, 1e-6, 1.0).log10() + 6.0) / 6.0).collect();
    u.sort_by(f64::total_cmp);
    let n = u.len() as f64;
    let ks = u
        .iter()
        .enumerate()
        .map(|(i, &x)| (x - i as f64 / n).abs().max(((i + 1) as f64 / n - x).abs()))
        .fold(0.0, f64::max);
    // 5% critical value of the one-sample KS statistic.
    assert!(ks < 1.358 / n.sqrt(), "KS statistic {ks}");
}

#[test]
fn eight_trials_span_the_search_space() {
    let base = PhaseConfig::new(Phase::FrrL, 1, 1e-3);
    let space = SearchSpace::default();
    let r = sweep(&base, &space, 8, 1, |c| Ok(c.learning_rate.log10())).unwrap();
    assert_eq!(r.trials.len(), 8);
    for t in &r.trials {
        assert!((1e-5..=1e-1).contains(&t.config.learning_rate));
        assert!((1e-6..=1.0).contains(&t.config.weights.lambda_L));
        assert!(space.norms.contains(&t.config.norm));
    }
    let best = r.trials.iter().map(|t| t.config.learning_rate).fold(0.0, f64::max);
    assert_eq!(r.best.learning_rate, best);
    let again = sweep(&base, &space, 8, 1, |c| Ok(c.learning_rate.log10())).unwrap();
    assert_eq!(r, again);
}

#[test]
fn sweep_rejects_an_empty_selection_set() {
    let data = small_colored(5, 12);
    let empty = data.subset(&[]);
    let base = PhaseConfig::new(Phase::FrrL, 1, 1e-3);
    assert!(sweep_phase(&small_model(0), &data, &empty, &base, &SearchSpace::default(), 1, 0).is_err());
}

#[test]
fn norm_names_match_config_files() {
    let cfg: PhaseConfig = serde_json::from_str(
        r#"{"phase":"FRR-L","steps":5,"batch_size":8,"learning_rate":0.01,
            "weights":{"lambda_L":1.0,"lambda_FLFT":0.0},"norm":"linf_1","decoder":"deeper","seed":2}"#,
    )
    .unwrap();
    assert_eq!(cfg.norm, NormVariant::LinfL1);
    assert_eq!(cfg.decoder, DecoderKind::Deeper);
    let back: PhaseConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(back, cfg);
}

fn tiny_lab(seed: u64) -> LabConfig {
    let mut cfg = LabConfig {
        train_per_class: 12,
        test_per_class: 4,
        size: 8,
        seed,
        branch_channels: vec![4, 8],
        pools: 1,
        ..LabConfig::default()
    };
    cfg.from_scratch.steps = 30;
    cfg.linear.steps = 20;
    cfg.finetune.steps = 20;
    cfg
}

#[test]
fn registry_runs_are_reproducible_and_audited() {
    let mut a = ConcatLab::new(tiny_lab(1), None).unwrap();
    let mut b = ConcatLab::new(tiny_lab(1), None).unwrap();
    let ra = a.run("E16").unwrap();
    let rb = b.run("E16").unwrap();
    assert_eq!(ra.accuracy, rb.accuracy);
    for init in [sblab::pipeline::Init::M1, sblab::pipeline::Init::M3, sblab::pipeline::Init::M4] {
        let (ma, mb) = (a.model(init).unwrap(), b.model(init).unwrap());
        assert_eq!(GROUPS.map(|g| ma.group_checksum(g)), GROUPS.map(|g| mb.group_checksum(g)));
    }
    // E16 pulls in its ancestors E1 and E8.
    assert!(a.records.contains_key("E1") && a.records.contains_key("E8"));
    for r in a.records.values() {
        assert!(r.outcomes.iter().flat_map(|o| &o.audits).all(|x| x.ok()), "{}", r.id);
        for key in ["id", "avg_complex", "avg_simple", "rand_simple", "rand_complex"] {
            assert!(r.accuracy.contains_key(key), "{} lacks {key}", r.id);
        }
    }
    let m1 = a.model(sblab::pipeline::Init::M1).unwrap();
    let m4 = a.model(sblab::pipeline::Init::M4).unwrap();
    let m3 = a.model(sblab::pipeline::Init::M3).unwrap();
    assert_eq!(m3.group_checksum(ParamGroup::Extractor), m1.group_checksum(ParamGroup::Extractor));
    assert_eq!(m4.group_checksum(ParamGroup::Head), m3.group_checksum(ParamGroup::Head));
}

#[test]
fn least_squares_decoder_is_noted_when_never_trained() {
    let mut lab = ConcatLab::new(tiny_lab(2), None).unwrap();
    let r = lab.run("E12").unwrap();
    assert!(r.notes.iter().any(|n| n.contains("least squares")), "{:?}", r.notes);
    let r = lab.run("E16").unwrap();
    assert!(!r.notes.iter().any(|n| n.contains("least squares")), "{:?}", r.notes);
}
