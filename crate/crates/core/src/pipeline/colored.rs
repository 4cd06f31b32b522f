//! End-to-end coloured-digit study: standard training, head retraining with
//! the reconstruction penalty, optional fixed-linear finetune, and the
//! feature taxonomy after each stage.

use serde::{Deserialize, Serialize};

use super::{accuracy_of, margins, optimize, predict, PhaseConfig, PhaseOutcome};
use crate::datasets::{digit_source, make_colored_mnist, LabeledDataset, SourceConfig, Split};
use crate::diagnostics::{
    classify_features, inter_feature_correlation, output_correlation, FactorProbe, FeatureTaxonomy, DEFAULT_THRESHOLD,
};
use crate::grad::Tensor;
use crate::nets::{CnnSpec, DecoderKind, ExtractorSpec, Model};
use crate::objectives::LossWeights;
use crate::phase::Phase;
use crate::Error;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColoredConfig {
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub size: usize,
    pub seed: u64,
    pub erm: PhaseConfig,
    pub frr_l: PhaseConfig,
    pub flft: Option<PhaseConfig>,
    pub threshold: f64,
    /// Head width: 1 for a single logistic logit, 2 for a two-way softmax.
    pub outputs: usize,
}

impl Default for ColoredConfig {
    fn default() -> Self {
        let mut frr_l = PhaseConfig::new(Phase::FrrL, 500, 1e-2);
        frr_l.weights = LossWeights { lambda_L: 1.0, lambda_FLFT: 0.0 };
        Self {
            train_per_class: 1000,
            test_per_class: 1000,
            size: 16,
            seed: 0,
            erm: PhaseConfig::new(Phase::Erm, 2000, 2e-3),
            frr_l,
            flft: None,
            threshold: DEFAULT_THRESHOLD,
            outputs: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub phase: Phase,
    pub id_accuracy: f64,
    pub ood_accuracy: f64,
    pub taxonomy: FeatureTaxonomy,
    pub outcome: PhaseOutcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColoredReport {
    pub stages: Vec<StageReport>,
    /// Inter-feature correlation of the standard model on the test split.
    pub correlation: Vec<f64>,
    pub feature_dim: usize,
}

impl ColoredReport {
    pub fn stage(&self, phase: Phase) -> Option<&StageReport> {
        self.stages.iter().find(|s| s.phase == phase)
    }

    pub fn correlation_matrix(&self) -> Tensor {
        Tensor::from_vec(&[self.feature_dim, self.feature_dim], self.correlation.clone())
    }
}

pub struct ColoredData {
    pub train: LabeledDataset,
    /// Held-out digits coloured like the training split.
    pub id_test: LabeledDataset,
    /// Held-out digits on uniformly random colours.
    pub test: LabeledDataset,
    /// Held-out digits on training-range colours chosen independently of
    /// the digit.
    pub decoupled: LabeledDataset,
}

impl ColoredData {
    pub fn generate(cfg: &ColoredConfig) -> Result<Self, Error> {
        let src = |per_class, seed| digit_source(SourceConfig::new(per_class, cfg.size, seed));
        let s = cfg.seed.wrapping_mul(16);
        let held_out = src(cfg.test_per_class, s + 3);
        Ok(Self {
            train: make_colored_mnist(&src(cfg.train_per_class, s + 1), Split::Train, s + 2)?,
            id_test: make_colored_mnist(&held_out, Split::Train, s + 5)?,
            test: make_colored_mnist(&held_out, Split::Test, s + 4)?,
            decoupled: make_colored_mnist(&held_out, Split::Decoupled, s + 6)?,
        })
    }
}

impl ColoredData {
    pub fn probes(&self) -> Probes<'_> {
        Probes { colour: &self.decoupled, shape: &self.decoupled }
    }
}

/// Simple factor (red minus green) and complex factor (digit class) per
/// sample of a coloured split.
pub fn factor_columns(ds: &LabeledDataset) -> Result<(Vec<f64>, Vec<f64>), Error> {
    let f = ds
        .factors
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("dataset has no factor annotations".into()))?;
    Ok((f.iter().map(|r| r.simple.scalar()).collect(), f.iter().map(|r| r.complex as f64).collect()))
}

/// Per-image mean of the red channel minus the green channel.
pub fn red_green_contrast(ds: &LabeledDataset) -> Result<Vec<f64>, Error> {
    let shape = ds.inputs.shape();
    if shape.len() != 4 || shape[1] < 2 {
        return Err(Error::InvalidInput(format!("expected (n, 3, h, w) images, got {shape:?}")));
    }
    let plane = shape[2] * shape[3];
    Ok((0..ds.len())
        .map(|i| {
            let x = ds.inputs.row(i);
            x[..plane].iter().zip(&x[plane..2 * plane]).map(|(r, g)| r - g).sum::<f64>() / plane as f64
        })
        .collect())
}

/// Feature-factor probes: the set on which each factor's correlation is
/// measured. Both factors must vary independently of each other.
#[derive(Clone, Copy)]
pub struct Probes<'a> {
    pub colour: &'a LabeledDataset,
    pub shape: &'a LabeledDataset,
}

/// Taxonomy of `model`'s features from the two probes, with output
/// correlation on `eval` (random colours). Returns the taxonomy, the `eval`
/// features and the `eval` accuracy.
pub fn taxonomy(
    model: &Model,
    probes: Probes<'_>,
    eval: &LabeledDataset,
    threshold: f64,
) -> Result<(FeatureTaxonomy, Tensor, f64), Error> {
    let simple = red_green_contrast(probes.colour)?;
    let (_, complex) = factor_columns(probes.shape)?;
    let colour_feats = model.extract_features(&probes.colour.inputs, 256)?;
    let shape_feats = model.extract_features(&probes.shape.inputs, 256)?;
    let mut t = classify_features(
        FactorProbe { features: &colour_feats, factor: &simple },
        FactorProbe { features: &shape_feats, factor: &complex },
        threshold,
    )?;
    let feats = model.extract_features(&eval.inputs, 256)?;
    let logits = model.logits_from_features(&feats);
    let score: Vec<f64> = if logits.row_len() == 2 {
        (0..logits.rows()).map(|i| logits.row(i)[1] - logits.row(i)[0]).collect()
    } else {
        margins(&logits, &eval.labels)
    };
    t.output_corr = Some(output_correlation(&score, &t, &feats)?);
    let acc = accuracy_of(&predict(&logits), &eval.labels);
    Ok((t, feats, acc))
}

pub fn colored_model(cfg: &ColoredConfig) -> Result<Model, Error> {
    Model::new(&ExtractorSpec::Cnn(CnnSpec::colored_digits(cfg.size, cfg.size)), cfg.outputs, DecoderKind::Linear, cfg.seed)
}

/// Runs every configured stage on freshly generated data.
pub fn run_colored(cfg: &ColoredConfig) -> Result<(ColoredReport, Model), Error> {
    let data = ColoredData::generate(cfg)?;
    run_colored_on(cfg, &data)
}

pub fn run_colored_on(cfg: &ColoredConfig, data: &ColoredData) -> Result<(ColoredReport, Model), Error> {
    let mut model = colored_model(cfg)?;
    let mut stages = Vec::new();
    let mut correlation = Vec::new();
    let plan: Vec<&PhaseConfig> = [Some(&cfg.erm), Some(&cfg.frr_l), cfg.flft.as_ref()].into_iter().flatten().collect();
    for (i, phase_cfg) in plan.into_iter().enumerate() {
        if i == 1 {
            model.reinit_head(phase_cfg.seed.wrapping_add(101));
        }
        let outcome = optimize(&mut model, &data.train, phase_cfg)?;
        let id_accuracy = super::accuracy(&model, &data.id_test)?;
        let (taxonomy, feats, ood_accuracy) = taxonomy(&model, data.probes(), &data.test, cfg.threshold)?;
        if i == 0 {
            correlation = inter_feature_correlation(&feats)?.into_data();
        }
        stages.push(StageReport { phase: phase_cfg.phase, id_accuracy, ood_accuracy, taxonomy, outcome });
    }
    let feature_dim = model.feature_dim();
    Ok((ColoredReport { stages, correlation, feature_dim }, model))
}
