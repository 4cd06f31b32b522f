//! Feature extractors, the linear head, reconstruction decoders, and the
//! per-phase trainable/frozen partition.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::grad::{GradError, Graph, NodeId, Tensor};
use crate::phase::Phase;
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Extractor,
    Head,
    Decoder,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor,
    pub trainable: bool,
}

impl Param {
    fn new(name: impl Into<String>, group: ParamGroup, value: Tensor) -> Self {
        Self {
            name: name.into(),
            group,
            value,
            trainable: true,
        }
    }
}

/// Convolutional stack: 3x3 conv + ReLU blocks, 2x2 max-pool after each of
/// the first `pools` blocks, then global average pooling.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnSpec {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub channels: Vec<usize>,
    pub pools: usize,
}

impl CnnSpec {
    /// Four-block network used for the coloured-digit task (m = 32).
    pub fn colored_digits(height: usize, width: usize) -> Self {
        Self {
            in_channels: 3,
            height,
            width,
            channels: vec![8, 16, 32, 32],
            pools: 2,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.channels.last().copied().unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExtractorSpec {
    /// Dense layers `widths[0] -> widths[1] -> ...`, ReLU between layers and
    /// none after the last.
    Mlp { widths: Vec<usize> },
    Cnn(CnnSpec),
    /// Two CNN branches over disjoint channel blocks of one input; features
    /// are `[simple | complex]`.
    DualCnn { simple: CnnSpec, complex: CnnSpec },
}

impl ExtractorSpec {
    pub fn output_dim(&self) -> usize {
        match self {
            ExtractorSpec::Mlp { widths } => widths.last().copied().unwrap_or(0),
            ExtractorSpec::Cnn(c) => c.output_dim(),
            ExtractorSpec::DualCnn { simple, complex } => simple.output_dim() + complex.output_dim(),
        }
    }

    /// Expected per-sample input shape (without the batch axis).
    pub fn input_shape(&self) -> Vec<usize> {
        match self {
            ExtractorSpec::Mlp { widths } => vec![widths.first().copied().unwrap_or(0)],
            ExtractorSpec::Cnn(c) => vec![c.in_channels, c.height, c.width],
            ExtractorSpec::DualCnn { simple, complex } => {
                vec![simple.in_channels + complex.in_channels, simple.height, simple.width]
            }
        }
    }

    fn validate(&self) -> Result<(), Error> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        match self {
            ExtractorSpec::Mlp { widths } => {
                if widths.len() < 2 || widths.contains(&0) {
                    return bad(format!("mlp widths must be >= 2 positive entries, got {widths:?}"));
                }
            }
            ExtractorSpec::Cnn(c) => validate_cnn(c)?,
            ExtractorSpec::DualCnn { simple, complex } => {
                validate_cnn(simple)?;
                validate_cnn(complex)?;
                if (simple.height, simple.width) != (complex.height, complex.width) {
                    return bad("dual-cnn branches must share spatial size".into());
                }
            }
        }
        Ok(())
    }
}

fn validate_cnn(c: &CnnSpec) -> Result<(), Error> {
    if c.in_channels == 0 || c.height == 0 || c.width == 0 || c.channels.is_empty() || c.channels.contains(&0) {
        return Err(Error::InvalidSpec(format!("cnn widths must be positive: {c:?}")));
    }
    if c.pools > c.channels.len() {
        return Err(Error::InvalidSpec("more pooling stages than conv blocks".into()));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractor {
    pub spec: ExtractorSpec,
    pub params: Vec<Param>,
}

fn normal_tensor(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor {
    let dist = Normal::new(0.0, std).expect("finite std");
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| dist.sample(rng)).collect())
}

fn cnn_params(prefix: &str, c: &CnnSpec, rng: &mut ChaCha8Rng) -> Vec<Param> {
    let mut out = Vec::new();
    let mut cin = c.in_channels;
    for (i, &cout) in c.channels.iter().enumerate() {
        let fan_in = (cin * 9) as f64;
        out.push(Param::new(
            format!("{prefix}conv{i}.weight"),
            ParamGroup::Extractor,
            normal_tensor(rng, &[cout, cin, 3, 3], (2.0 / fan_in).sqrt()),
        ));
        out.push(Param::new(format!("{prefix}conv{i}.bias"), ParamGroup::Extractor, Tensor::zeros(&[cout])));
        cin = cout;
    }
    out
}

/// Builds an extractor with Kaiming-scaled weights drawn from `seed`.
pub fn build_extractor(spec: &ExtractorSpec, seed: u64) -> Result<FeatureExtractor, Error> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = match spec {
        ExtractorSpec::Mlp { widths } => {
            let mut p = Vec::new();
            let last = widths.len() - 2;
            for (i, pair) in widths.windows(2).enumerate() {
                let gain = if i < last { 2.0 } else { 1.0 };
                p.push(Param::new(
                    format!("dense{i}.weight"),
                    ParamGroup::Extractor,
                    normal_tensor(&mut rng, &[pair[0], pair[1]], (gain / pair[0] as f64).sqrt()),
                ));
                p.push(Param::new(format!("dense{i}.bias"), ParamGroup::Extractor, Tensor::zeros(&[pair[1]])));
            }
            p
        }
        ExtractorSpec::Cnn(c) => cnn_params("", c, &mut rng),
        ExtractorSpec::DualCnn { simple, complex } => {
            let mut p = cnn_params("simple.", simple, &mut rng);
            p.extend(cnn_params("complex.", complex, &mut rng));
            p
        }
    };
    Ok(FeatureExtractor {
        spec: spec.clone(),
        params,
    })
}

impl FeatureExtractor {
    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    fn check_input(&self, x: &Tensor) -> Result<(), Error> {
        let want = self.spec.input_shape();
        if x.rank() != want.len() + 1 || x.shape()[1..] != want[..] {
            return Err(GradError::ShapeMismatch {
                op: "extractor input".into(),
                lhs: x.shape().to_vec(),
                rhs: want,
            }
            .into());
        }
        Ok(())
    }

    /// Records the extractor on `g`; `nodes[i]` receives the leaf for `params[i]`.
    fn record(&self, g: &mut Graph, x: NodeId, nodes: &mut Vec<NodeId>) -> Result<NodeId, GradError> {
        for p in &self.params {
            nodes.push(g.leaf(p.value.clone(), p.trainable));
        }
        match &self.spec {
            ExtractorSpec::Mlp { widths } => {
                let mut h = x;
                let layers = widths.len() - 1;
                for i in 0..layers {
                    h = g.linear(h, nodes[2 * i], nodes[2 * i + 1])?;
                    if i + 1 < layers {
                        h = g.relu(h)?;
                    }
                }
                Ok(h)
            }
            ExtractorSpec::Cnn(c) => record_cnn(g, c, x, nodes),
            ExtractorSpec::DualCnn { simple, complex } => {
                let xs = g.narrow(x, 0, simple.in_channels)?;
                let xc = g.narrow(x, simple.in_channels, complex.in_channels)?;
                let split = simple.channels.len() * 2;
                let fs = record_cnn(g, simple, xs, &nodes[..split])?;
                let fc = record_cnn(g, complex, xc, &nodes[split..])?;
                g.concat(&[fs, fc])
            }
        }
    }
}

fn record_cnn(g: &mut Graph, c: &CnnSpec, x: NodeId, nodes: &[NodeId]) -> Result<NodeId, GradError> {
    let mut h = x;
    for i in 0..c.channels.len() {
        h = g.conv2d(h, nodes[2 * i], nodes[2 * i + 1])?;
        h = g.relu(h)?;
        if i < c.pools {
            h = g.maxpool2(h)?;
        }
    }
    g.global_avg_pool(h)
}

/// Classifier weights `W (m, k)`; logits are `features · W`, no bias.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearHead {
    pub weight: Param,
}

impl LinearHead {
    pub fn new(m: usize, k: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            weight: Param::new("head.weight", ParamGroup::Head, normal_tensor(&mut rng, &[m, k], (1.0 / m as f64).sqrt())),
        }
    }

    pub fn classes(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn features(&self) -> usize {
        self.weight.value.shape()[0]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    /// `T(y) = phi y`, `phi (m, k)`.
    Linear,
    /// `T(y) = phi y + b`, an offset added to the linear map.
    Affine,
    /// `T(y) = W y`, tied to the head.
    Shared,
    /// `R^k -> R^2k -> R^m` with a ReLU in between.
    Deeper,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decoder {
    pub kind: DecoderKind,
    pub params: Vec<Param>,
}

impl Decoder {
    pub fn new(kind: DecoderKind, m: usize, k: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = match kind {
            DecoderKind::Linear => vec![Param::new(
                "decoder.phi",
                ParamGroup::Decoder,
                normal_tensor(&mut rng, &[m, k], (1.0 / k as f64).sqrt()),
            )],
            DecoderKind::Affine => vec![
                Param::new("decoder.phi", ParamGroup::Decoder, normal_tensor(&mut rng, &[m, k], (1.0 / k as f64).sqrt())),
                Param::new("decoder.bias", ParamGroup::Decoder, Tensor::zeros(&[m])),
            ],
            DecoderKind::Shared => Vec::new(),
            DecoderKind::Deeper => {
                let h = 2 * k;
                vec![
                    Param::new("decoder.hidden.weight", ParamGroup::Decoder, normal_tensor(&mut rng, &[k, h], (2.0 / k as f64).sqrt())),
                    Param::new("decoder.hidden.bias", ParamGroup::Decoder, Tensor::zeros(&[h])),
                    Param::new("decoder.out.weight", ParamGroup::Decoder, normal_tensor(&mut rng, &[h, m], (1.0 / h as f64).sqrt())),
                    Param::new("decoder.out.bias", ParamGroup::Decoder, Tensor::zeros(&[m])),
                ]
            }
        };
        Self { kind, params }
    }

    fn record(&self, g: &mut Graph, logits: NodeId, head: NodeId, nodes: &mut Vec<NodeId>) -> Result<NodeId, GradError> {
        for p in &self.params {
            nodes.push(g.leaf(p.value.clone(), p.trainable));
        }
        match self.kind {
            DecoderKind::Linear => g.matmul_t(logits, nodes[0]),
            DecoderKind::Affine => {
                let phi_t = g.transpose(nodes[0])?;
                g.linear(logits, phi_t, nodes[1])
            }
            DecoderKind::Shared => g.matmul_t(logits, head),
            DecoderKind::Deeper => {
                let h = g.linear(logits, nodes[0], nodes[1])?;
                let h = g.relu(h)?;
                g.linear(h, nodes[2], nodes[3])
            }
        }
    }
}

/// Identifies one parameter tensor inside a [`Model`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamKey {
    pub group: ParamGroup,
    pub index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub extractor: FeatureExtractor,
    pub head: LinearHead,
    pub decoder: Decoder,
}

/// Node handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardNodes {
    pub features: NodeId,
    pub logits: NodeId,
    pub reconstruction: NodeId,
    pub bindings: Vec<(ParamKey, NodeId)>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PartitionReport {
    pub notes: Vec<String>,
}

impl Model {
    pub fn new(spec: &ExtractorSpec, classes: usize, decoder: DecoderKind, seed: u64) -> Result<Self, Error> {
        if classes == 0 {
            return Err(Error::InvalidSpec("classes must be positive".into()));
        }
        let extractor = build_extractor(spec, seed)?;
        let m = extractor.output_dim();
        Ok(Self {
            head: LinearHead::new(m, classes, seed.wrapping_add(1)),
            decoder: Decoder::new(decoder, m, classes, seed.wrapping_add(2)),
            extractor,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.extractor.output_dim()
    }

    pub fn classes(&self) -> usize {
        self.head.classes()
    }

    pub fn param(&self, key: ParamKey) -> &Param {
        match key.group {
            ParamGroup::Extractor => &self.extractor.params[key.index],
            ParamGroup::Head => &self.head.weight,
            ParamGroup::Decoder => &self.decoder.params[key.index],
        }
    }

    pub fn param_mut(&mut self, key: ParamKey) -> &mut Param {
        match key.group {
            ParamGroup::Extractor => &mut self.extractor.params[key.index],
            ParamGroup::Head => &mut self.head.weight,
            ParamGroup::Decoder => &mut self.decoder.params[key.index],
        }
    }

    pub fn keys(&self) -> Vec<ParamKey> {
        let mut keys: Vec<ParamKey> = (0..self.extractor.params.len())
            .map(|index| ParamKey { group: ParamGroup::Extractor, index })
            .collect();
        keys.push(ParamKey { group: ParamGroup::Head, index: 0 });
        keys.extend((0..self.decoder.params.len()).map(|index| ParamKey { group: ParamGroup::Decoder, index }));
        keys
    }

    pub fn params(&self) -> impl Iterator<Item = &Param> {
        self.extractor
            .params
            .iter()
            .chain(std::iter::once(&self.head.weight))
            .chain(self.decoder.params.iter())
    }

    /// Digest of every tensor in one group, for freezing audits.
    pub fn group_checksum(&self, group: ParamGroup) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for p in self.params().filter(|p| p.group == group) {
            h = crate::grad::fnv_step(h, p.value.checksum());
        }
        h
    }

    pub fn reinit_head(&mut self, seed: u64) {
        let (m, k) = (self.feature_dim(), self.classes());
        let trainable = self.head.weight.trainable;
        self.head = LinearHead::new(m, k, seed);
        self.head.weight.trainable = trainable;
    }

    pub fn reinit_decoder(&mut self, kind: DecoderKind, seed: u64) {
        self.decoder = Decoder::new(kind, self.feature_dim(), self.classes(), seed);
    }

    /// Sets the trainable flags for `phase`.
    pub fn set_phase_partition(&mut self, phase: Phase) -> PartitionReport {
        let (ext, head, dec) = (phase.trains_extractor(), phase.trains_head(), phase.trains_decoder());
        for p in &mut self.extractor.params {
            p.trainable = ext;
        }
        self.head.weight.trainable = head;
        for p in &mut self.decoder.params {
            p.trainable = dec;
        }
        let mut report = PartitionReport::default();
        if self.decoder.kind == DecoderKind::Shared && phase.uses_frr() && !head {
            report.notes.push(format!(
                "{phase}: head is frozen, so the tied (shared) decoder is frozen as well"
            ));
        }
        report
    }

    /// Full forward pass: features, logits, and reconstruction on one graph.
    pub fn forward(&self, g: &mut Graph, x: &Tensor) -> Result<ForwardNodes, Error> {
        self.extractor.check_input(x)?;
        let input = g.constant(x.clone());
        let mut ext_nodes = Vec::with_capacity(self.extractor.params.len());
        let features = self.extractor.record(g, input, &mut ext_nodes)?;
        let mut out = self.head_forward(g, features)?;
        out.bindings.extend(
            ext_nodes
                .into_iter()
                .enumerate()
                .map(|(index, n)| (ParamKey { group: ParamGroup::Extractor, index }, n)),
        );
        Ok(out)
    }

    /// Head and decoder on precomputed features `(n, m)`.
    pub fn forward_from_features(&self, g: &mut Graph, features: &Tensor) -> Result<ForwardNodes, Error> {
        if features.rank() != 2 || features.shape()[1] != self.feature_dim() {
            return Err(GradError::ShapeMismatch {
                op: "head input".into(),
                lhs: features.shape().to_vec(),
                rhs: vec![features.rows(), self.feature_dim()],
            }
            .into());
        }
        let f = g.constant(features.clone());
        self.head_forward(g, f)
    }

    fn head_forward(&self, g: &mut Graph, features: NodeId) -> Result<ForwardNodes, Error> {
        let w = g.leaf(self.head.weight.value.clone(), self.head.weight.trainable);
        let logits = g.matmul(features, w)?;
        let mut dec_nodes = Vec::new();
        let reconstruction = self.decoder.record(g, logits, w, &mut dec_nodes)?;
        let mut bindings = vec![(ParamKey { group: ParamGroup::Head, index: 0 }, w)];
        bindings.extend(
            dec_nodes
                .into_iter()
                .enumerate()
                .map(|(index, n)| (ParamKey { group: ParamGroup::Decoder, index }, n)),
        );
        Ok(ForwardNodes {
            features,
            logits,
            reconstruction,
            bindings,
        })
    }

    /// Features for a whole input set, in chunks, without keeping graphs.
    pub fn extract_features(&self, x: &Tensor, chunk: usize) -> Result<Tensor, Error> {
        self.extractor.check_input(x)?;
        let n = x.rows();
        let m = self.feature_dim();
        let mut data = Vec::with_capacity(n * m);
        // Frozen copy: no gradient bookkeeping during extraction.
        let frozen = FeatureExtractor {
            spec: self.extractor.spec.clone(),
            params: self
                .extractor
                .params
                .iter()
                .map(|p| Param { trainable: false, ..p.clone() })
                .collect(),
        };
        let mut start = 0;
        while start < n {
            let end = (start + chunk.max(1)).min(n);
            let idx: Vec<usize> = (start..end).collect();
            let xb = x.select_rows(&idx);
            let mut g = Graph::new();
            let input = g.constant(xb);
            let mut nodes = Vec::new();
            let f = frozen.record(&mut g, input, &mut nodes)?;
            data.extend_from_slice(g.value(f).data());
            start = end;
        }
        Ok(Tensor::from_vec(&[n, m], data))
    }

    /// Logits for precomputed features.
    pub fn logits_from_features(&self, features: &Tensor) -> Tensor {
        let (n, m) = (features.rows(), self.feature_dim());
        let k = self.classes();
        let mut out = vec![0.0; n * k];
        crate::grad::gemm(n, m, k, features.data(), false, self.head.weight.value.data(), false, &mut out, 0.0);
        Tensor::from_vec(&[n, k], out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mlp_parameter_count() {
        let e = build_extractor(&ExtractorSpec::Mlp { widths: vec![2, 8, 2] }, 0).unwrap();
        assert_eq!(e.parameter_count(), 8 * 2 + 8 + 2 * 8 + 2);
    }

    #[test]
    fn colored_digit_cnn_has_m32() {
        let e = build_extractor(&ExtractorSpec::Cnn(CnnSpec::colored_digits(16, 16)), 0).unwrap();
        assert_eq!(e.output_dim(), 32);
    }

    #[test]
    fn dual_cnn_concatenates_branches() {
        let branch = |c| CnnSpec { in_channels: c, height: 8, width: 8, channels: vec![4, 6], pools: 1 };
        let spec = ExtractorSpec::DualCnn { simple: branch(1), complex: branch(3) };
        assert_eq!(spec.output_dim(), 12);
        assert_eq!(spec.input_shape(), vec![4, 8, 8]);
    }

    #[test]
    fn non_positive_widths_rejected() {
        assert!(build_extractor(&ExtractorSpec::Mlp { widths: vec![2, 0, 2] }, 0).is_err());
        let mut c = CnnSpec::colored_digits(16, 16);
        c.channels[1] = 0;
        assert!(build_extractor(&ExtractorSpec::Cnn(c), 0).is_err());
    }

    #[test]
    fn identity_mlp_passes_input_through() {
        let mut model = Model::new(&ExtractorSpec::Mlp { widths: vec![2, 2, 2] }, 2, DecoderKind::Linear, 3).unwrap();
        for p in &mut model.extractor.params {
            p.value = if p.value.rank() == 2 { Tensor::identity(2) } else { Tensor::zeros(&[2]) };
        }
        let mut g = Graph::new();
        let out = model.forward(&mut g, &Tensor::matrix(1, 2, vec![1.0, 2.0])).unwrap();
        assert_eq!(g.value(out.features).data(), &[1.0, 2.0]);
    }

    #[test]
    fn zero_decoder_reconstructs_zero() {
        let mut model = Model::new(&ExtractorSpec::Mlp { widths: vec![3, 4] }, 2, DecoderKind::Linear, 5).unwrap();
        model.decoder.params[0].value = Tensor::zeros(&[4, 2]);
        let mut g = Graph::new();
        let out = model.forward(&mut g, &Tensor::matrix(2, 3, vec![1., -2., 3., 0.5, 0.1, 9.])).unwrap();
        assert!(g.value(out.reconstruction).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shared_decoder_maps_logits_through_head() {
        let model = Model::new(&ExtractorSpec::Mlp { widths: vec![3, 5] }, 2, DecoderKind::Shared, 8).unwrap();
        let x = Tensor::matrix(2, 3, vec![0.3, -1.0, 2.0, 1.5, 0.2, -0.7]);
        let mut g = Graph::new();
        let out = model.forward(&mut g, &x).unwrap();
        let z = g.value(out.logits);
        let w = &model.head.weight.value;
        let r = g.value(out.reconstruction);
        for i in 0..2 {
            for j in 0..5 {
                let want: f64 = (0..2).map(|c| z.data()[i * 2 + c] * w.data()[j * 2 + c]).sum();
                assert!((r.data()[i * 5 + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn input_shape_checked() {
        let model = Model::new(&ExtractorSpec::Mlp { widths: vec![3, 5] }, 2, DecoderKind::Linear, 0).unwrap();
        let mut g = Graph::new();
        assert!(model.forward(&mut g, &Tensor::zeros(&[2, 4])).is_err());
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let spec = ExtractorSpec::Cnn(CnnSpec::colored_digits(8, 8));
        let a = Model::new(&spec, 1, DecoderKind::Deeper, 42).unwrap();
        let b = Model::new(&spec, 1, DecoderKind::Deeper, 42).unwrap();
        let c = Model::new(&spec, 1, DecoderKind::Deeper, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn partition_flags_per_phase() {
        let mut m = Model::new(&ExtractorSpec::Mlp { widths: vec![3, 5] }, 2, DecoderKind::Linear, 0).unwrap();
        m.set_phase_partition(Phase::FrrL);
        assert!(m.extractor.params.iter().all(|p| !p.trainable));
        assert!(m.head.weight.trainable && m.decoder.params[0].trainable);
        m.set_phase_partition(Phase::FrrFlft);
        assert!(m.extractor.params.iter().all(|p| p.trainable));
        assert!(!m.head.weight.trainable && !m.decoder.params[0].trainable);
        m.set_phase_partition(Phase::Erm);
        assert!(m.extractor.params.iter().all(|p| p.trainable) && m.head.weight.trainable);
    }

    #[test]
    fn shared_decoder_under_flft_is_noted() {
        let mut m = Model::new(&ExtractorSpec::Mlp { widths: vec![3, 5] }, 2, DecoderKind::Shared, 0).unwrap();
        assert_eq!(m.set_phase_partition(Phase::FrrFlft).notes.len(), 1);
        assert!(m.set_phase_partition(Phase::FrrL).notes.is_empty());
    }
}
