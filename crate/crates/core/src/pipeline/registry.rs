//! The eighteen training regimes on the two-branch concatenation dataset,
//! with model lineage resolved on demand.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{fit_linear_decoder, optimize, PhaseConfig, RunRecord};
use crate::checkpoint::save_model;
use crate::datasets::{
    digit_source, make_avg_substitution, make_concat_dataset, make_rand_shuffle, texture_source, Branch, ConcatLayout,
    LabeledDataset, SourceConfig,
};
use crate::nets::{CnnSpec, DecoderKind, ExtractorSpec, Model};
use crate::objectives::LossWeights;
use crate::phase::Phase;
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Init {
    Random,
    M1,
    M2,
    M3,
    M4,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layers {
    All,
    Linear,
    Extractor,
}

/// Training set of a regime. `RandSimple` shuffles the simple branch (labels
/// follow the complex branch) and `RandComplex` the reverse.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainSet {
    Concat,
    RandSimple,
    RandComplex,
}

impl TrainSet {
    fn as_str(self) -> &'static str {
        match self {
            TrainSet::Concat => "concat",
            TrainSet::RandSimple => "rand_simple",
            TrainSet::RandComplex => "rand_complex",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ExperimentDef {
    pub id: &'static str,
    pub init: Init,
    pub layers: Layers,
    pub phase: Phase,
    pub train: TrainSet,
    pub produces: Option<Init>,
}

const fn def(id: &'static str, init: Init, layers: Layers, phase: Phase, train: TrainSet, produces: Option<Init>) -> ExperimentDef {
    ExperimentDef { id, init, layers, phase, train, produces }
}

use Init::*;
use Layers::{All, Extractor, Linear};
use TrainSet::*;

pub const EXPERIMENTS: [ExperimentDef; 18] = [
    def("E1", Random, All, Phase::Erm, Concat, Some(M1)),
    def("E2", Random, All, Phase::Erm, RandSimple, None),
    def("E3", Random, All, Phase::Erm, RandComplex, None),
    def("E4", M1, Linear, Phase::ErmL, Concat, Some(M2)),
    def("E5", M1, Linear, Phase::ErmL, RandSimple, None),
    def("E6", M1, Linear, Phase::ErmL, RandComplex, None),
    def("E7", M1, Linear, Phase::FullRankL, Concat, None),
    def("E8", M1, Linear, Phase::FrrL, Concat, Some(M3)),
    def("E9", M2, All, Phase::ErmFt, Concat, None),
    def("E10", M2, Extractor, Phase::ErmFlft, Concat, None),
    def("E11", M2, All, Phase::FrrFt, Concat, None),
    def("E12", M2, Extractor, Phase::FrrFlft, Concat, None),
    def("E13", M3, All, Phase::ErmFt, Concat, None),
    def("E14", M3, Extractor, Phase::ErmFlft, Concat, None),
    def("E15", M3, All, Phase::FrrFt, Concat, None),
    def("E16", M3, Extractor, Phase::FrrFlft, Concat, Some(M4)),
    def("E17", M4, Linear, Phase::ErmL, RandSimple, None),
    def("E18", M4, Linear, Phase::ErmL, RandComplex, None),
];

pub fn experiment_ids() -> Vec<&'static str> {
    EXPERIMENTS.iter().map(|e| e.id).collect()
}

fn lookup(id: &str) -> Result<&'static ExperimentDef, Error> {
    EXPERIMENTS
        .iter()
        .find(|e| e.id.eq_ignore_ascii_case(id))
        .ok_or_else(|| Error::UnknownExperiment {
            id: id.to_string(),
            valid: experiment_ids().join(", "),
        })
}

/// Scale, architecture and per-regime budgets for the concatenation lab.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabConfig {
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub size: usize,
    pub seed: u64,
    pub branch_channels: Vec<usize>,
    pub pools: usize,
    /// Pixel noise on the digit branch. Clean digits are fitted within a few
    /// hundred steps, before the texture branch has learned anything.
    pub digit_noise: f64,
    /// Template for training from scratch.
    pub from_scratch: PhaseConfig,
    /// Template for head-only regimes (`weights.lambda_L` drives FRR-L).
    pub linear: PhaseConfig,
    /// Template for finetuning regimes (`weights.lambda_FLFT`).
    pub finetune: PhaseConfig,
    /// `lambda_L` used by the full-rank regime.
    pub lambda_full_rank: f64,
}

impl Default for LabConfig {
    fn default() -> Self {
        let weights = LossWeights { lambda_L: 1.0, lambda_FLFT: 1.0 };
        let mut linear = PhaseConfig::new(Phase::ErmL, 1000, 1e-3);
        linear.weights = LossWeights { lambda_L: 0.1, ..weights };
        let mut finetune = PhaseConfig::new(Phase::FrrFlft, 2000, 3e-4);
        finetune.weights = weights;
        Self {
            train_per_class: 500,
            test_per_class: 200,
            size: 16,
            seed: 0,
            branch_channels: vec![16, 32, 64],
            pools: 2,
            digit_noise: 0.45,
            from_scratch: PhaseConfig::new(Phase::Erm, 5000, 1e-3),
            linear,
            finetune,
            lambda_full_rank: 0.1,
        }
    }
}

impl LabConfig {
    pub fn extractor(&self, layout: ConcatLayout) -> ExtractorSpec {
        let branch = |in_channels| CnnSpec {
            in_channels,
            height: layout.height,
            width: layout.width,
            channels: self.branch_channels.clone(),
            pools: self.pools,
        };
        ExtractorSpec::DualCnn {
            simple: branch(layout.simple_channels),
            complex: branch(layout.complex_channels),
        }
    }

    fn phase_config(&self, e: &ExperimentDef, index: usize) -> PhaseConfig {
        let mut cfg = match e.layers {
            Layers::All if e.init == Init::Random => self.from_scratch.clone(),
            Layers::Linear => self.linear.clone(),
            _ => self.finetune.clone(),
        };
        cfg.phase = e.phase;
        if e.phase == Phase::FullRankL {
            cfg.weights.lambda_L = self.lambda_full_rank;
        }
        cfg.seed = self.seed.wrapping_mul(1000).wrapping_add(index as u64 + 1);
        cfg
    }
}

/// Train and test splits plus every evaluation variant.
#[derive(Clone, Debug)]
pub struct ConcatData {
    pub layout: ConcatLayout,
    pub train: LabeledDataset,
    pub train_rand_simple: LabeledDataset,
    pub train_rand_complex: LabeledDataset,
    pub test: LabeledDataset,
    pub test_rand_simple: LabeledDataset,
    pub test_rand_complex: LabeledDataset,
    /// Complex branch replaced by its mean: simple-only accuracy.
    pub test_avg_complex: LabeledDataset,
    /// Simple branch replaced by its mean: complex-only accuracy.
    pub test_avg_simple: LabeledDataset,
}

impl ConcatData {
    pub fn generate(cfg: &LabConfig) -> Result<Self, Error> {
        let src = |per_class, seed| SourceConfig::new(per_class, cfg.size, seed);
        let digits = |per_class, seed| digit_source(src(per_class, seed).with_noise(cfg.digit_noise));
        let s = cfg.seed.wrapping_mul(64);
        let (train, layout) = make_concat_dataset(
            &digits(cfg.train_per_class, s + 1),
            &texture_source(src(cfg.train_per_class, s + 2)),
            s + 3,
        )?;
        let (test, _) = make_concat_dataset(
            &digits(cfg.test_per_class, s + 4),
            &texture_source(src(cfg.test_per_class, s + 5)),
            s + 6,
        )?;
        Ok(Self {
            train_rand_simple: make_rand_shuffle(&train, layout, Branch::Simple, s + 7)?,
            train_rand_complex: make_rand_shuffle(&train, layout, Branch::Complex, s + 8)?,
            test_rand_simple: make_rand_shuffle(&test, layout, Branch::Simple, s + 9)?,
            test_rand_complex: make_rand_shuffle(&test, layout, Branch::Complex, s + 10)?,
            test_avg_complex: make_avg_substitution(&test, layout, Branch::Complex, &train)?,
            test_avg_simple: make_avg_substitution(&test, layout, Branch::Simple, &train)?,
            layout,
            train,
            test,
        })
    }

    fn train_set(&self, t: TrainSet) -> &LabeledDataset {
        match t {
            TrainSet::Concat => &self.train,
            TrainSet::RandSimple => &self.train_rand_simple,
            TrainSet::RandComplex => &self.train_rand_complex,
        }
    }

    fn id_test(&self, t: TrainSet) -> &LabeledDataset {
        match t {
            TrainSet::Concat => &self.test,
            TrainSet::RandSimple => &self.test_rand_simple,
            TrainSet::RandComplex => &self.test_rand_complex,
        }
    }
}

struct Lineage {
    model: Model,
    decoder_trained: bool,
}

/// Runs registry experiments, training prerequisite models as needed and
/// keeping them for reuse.
pub struct ConcatLab {
    pub config: LabConfig,
    pub data: ConcatData,
    pub out_dir: Option<PathBuf>,
    pub records: BTreeMap<String, RunRecord>,
    models: BTreeMap<Init, Lineage>,
}

impl ConcatLab {
    pub fn new(config: LabConfig, out_dir: Option<PathBuf>) -> Result<Self, Error> {
        let data = ConcatData::generate(&config)?;
        Ok(Self { config, data, out_dir, records: BTreeMap::new(), models: BTreeMap::new() })
    }

    pub fn model(&self, init: Init) -> Option<&Model> {
        self.models.get(&init).map(|l| &l.model)
    }

    fn producer(init: Init) -> &'static ExperimentDef {
        EXPERIMENTS.iter().find(|e| e.produces == Some(init)).expect("every lineage model has a producer")
    }

    fn starting_point(&mut self, init: Init) -> Result<(Model, bool), Error> {
        if init == Init::Random {
            let spec = self.config.extractor(self.data.layout);
            let m = Model::new(&spec, self.data.train.classes, DecoderKind::Linear, self.config.seed)?;
            return Ok((m, false));
        }
        if !self.models.contains_key(&init) {
            self.run(Self::producer(init).id)?;
        }
        let l = &self.models[&init];
        Ok((l.model.clone(), l.decoder_trained))
    }

    /// Runs one regime (and any missing ancestors) and returns its record.
    pub fn run(&mut self, id: &str) -> Result<RunRecord, Error> {
        let e = lookup(id)?;
        if let Some(r) = self.records.get(e.id) {
            return Ok(r.clone());
        }
        let index = EXPERIMENTS.iter().position(|x| x.id == e.id).expect("found above");
        let (mut model, mut decoder_trained) = self.starting_point(e.init)?;
        let start = Instant::now();
        let cfg = self.config.phase_config(e, index);
        let mut record = RunRecord::new(e.id);
        if e.layers == Layers::Linear {
            model.reinit_head(cfg.seed.wrapping_add(101));
        }
        let train = self.data.train_set(e.train);
        if e.phase == Phase::FrrFlft && !decoder_trained {
            fit_linear_decoder(&mut model, train, 1e-6)?;
            record.notes.push("decoder fitted by least squares on frozen features".into());
        }
        record.push_outcome(optimize(&mut model, train, &cfg)?);
        decoder_trained |= e.phase.trains_decoder() || e.phase == Phase::FrrFlft;
        let d = &self.data;
        record.evaluate(
            &model,
            &[
                ("id", d.id_test(e.train)),
                ("avg_complex", &d.test_avg_complex),
                ("avg_simple", &d.test_avg_simple),
                ("rand_simple", &d.test_rand_simple),
                ("rand_complex", &d.test_rand_complex),
            ],
        )?;
        if let Some(dir) = &self.out_dir {
            std::fs::create_dir_all(dir)?;
            let path = dir.join(format!("{}.ckpt", e.id));
            save_model(&path, &model, &[format!("{:?}", e.init), e.phase.to_string()])?;
            record.checkpoints.push(path);
        }
        record.seconds = start.elapsed().as_secs_f64();
        if let Some(p) = e.produces {
            self.models.insert(p, Lineage { model, decoder_trained });
        }
        self.records.insert(e.id.to_string(), record.clone());
        Ok(record)
    }
}

/// Table-shaped CSV; regimes without a record are skipped.
pub fn table2_csv<'a>(records: impl IntoIterator<Item = &'a RunRecord>) -> String {
    let mut s = String::from("exp,init,layers,loss,train_data,id,avg_complex,avg_simple,rand_simple,rand_complex\n");
    for r in records {
        let Ok(e) = lookup(&r.id) else { continue };
        let acc = |k: &str| r.accuracy.get(k).map_or(String::new(), |v| format!("{v:.2}"));
        let _ = writeln!(
            s,
            "{},{:?},{:?},{},{},{},{},{},{},{}",
            e.id,
            e.init,
            e.layers,
            e.phase,
            e.train.as_str(),
            acc("id"),
            acc("avg_complex"),
            acc("avg_simple"),
            acc("rand_simple"),
            acc("rand_complex")
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_id_lists_valid_ids() {
        let err = lookup("E99").unwrap_err().to_string();
        assert!(err.contains("E1") && err.contains("E18"));
    }

    #[test]
    fn lineage_producers_exist() {
        for init in [Init::M1, Init::M2, Init::M3, Init::M4] {
            assert_eq!(ConcatLab::producer(init).produces, Some(init));
        }
    }

    #[test]
    fn layers_match_phase_flags() {
        for e in &EXPERIMENTS {
            match e.layers {
                Layers::Linear => assert!(e.phase.is_linear_only(), "{}", e.id),
                Layers::Extractor => assert!(!e.phase.trains_head() && e.phase.trains_extractor(), "{}", e.id),
                Layers::All => assert!(e.phase.trains_head() && e.phase.trains_extractor(), "{}", e.id),
            }
        }
    }
}
