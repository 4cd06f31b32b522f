//! Training loop, evaluation, the three-phase procedure, the experiment
//! registry, and random-search sweeps.

mod colored;
mod registry;
mod sweep;

pub use colored::{
    colored_model, factor_columns, red_green_contrast, run_colored, run_colored_on, taxonomy, ColoredConfig, ColoredData, ColoredReport,
    Probes, StageReport,
};
pub use registry::{
    experiment_ids, table2_csv, ConcatData, ConcatLab, ExperimentDef, Init, LabConfig, Layers, TrainSet, EXPERIMENTS,
};
pub use sweep::{sample_loguniform, sweep, sweep_phase, SearchSpace, SweepResult, Trial};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::save_model;
use crate::datasets::LabeledDataset;
use crate::grad::{Graph, Tensor};
use crate::nets::{DecoderKind, Model, ParamGroup};
use crate::objectives::{phase_loss, LossWeights, NormVariant};
use crate::optim::{Adam, AdamConfig};
use crate::phase::Phase;
use crate::Error;

/// Rows per chunk when running inference over a whole dataset.
const EVAL_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseConfig {
    pub phase: Phase,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weights: LossWeights,
    pub norm: NormVariant,
    pub decoder: DecoderKind,
    pub seed: u64,
}

impl PhaseConfig {
    pub fn new(phase: Phase, steps: usize, learning_rate: f64) -> Self {
        Self {
            phase,
            steps,
            batch_size: 64,
            learning_rate,
            weights: LossWeights::default(),
            norm: NormVariant::L1Inf,
            decoder: DecoderKind::Linear,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::InvalidSpec(format!(
                "steps and batch_size must be >= 1 (got {} and {})",
                self.steps, self.batch_size
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidSpec(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        self.weights.validate()
    }

    /// The regularizer weight this phase actually uses.
    pub fn active_lambda(&self) -> f64 {
        match self.phase {
            Phase::FrrL | Phase::FullRankL => self.weights.lambda_L,
            Phase::FrrFt | Phase::FrrFlft => self.weights.lambda_FLFT,
            _ => 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezeAudit {
    pub group: ParamGroup,
    pub trained: bool,
    pub before: u64,
    pub after: u64,
}

impl FreezeAudit {
    pub fn ok(&self) -> bool {
        self.trained || self.before == self.after
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseOutcome {
    pub phase: Phase,
    pub steps: usize,
    pub final_loss: f64,
    pub final_ce: f64,
    pub final_regularizer: Option<f64>,
    pub loss_trace: Vec<f64>,
    pub audits: Vec<FreezeAudit>,
    pub notes: Vec<String>,
    pub seconds: f64,
}

const GROUPS: [ParamGroup; 3] = [ParamGroup::Extractor, ParamGroup::Head, ParamGroup::Decoder];

fn group_trained(phase: Phase, group: ParamGroup) -> bool {
    match group {
        ParamGroup::Extractor => phase.trains_extractor(),
        ParamGroup::Head => phase.trains_head(),
        ParamGroup::Decoder => phase.trains_decoder(),
    }
}

/// Seeded epoch-wise shuffling into fixed-size minibatches.
struct Batches {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
    size: usize,
}

impl Batches {
    fn new(n: usize, size: usize, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..n).collect(),
            pos: n,
            size: size.min(n),
        }
    }

    fn next_batch(&mut self) -> Vec<usize> {
        if self.pos + self.size > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let b = self.order[self.pos..self.pos + self.size].to_vec();
        self.pos += self.size;
        b
    }
}

/// Runs `cfg.steps` Adam updates of the phase objective on `data`, touching
/// only the groups the phase trains. Linear-only phases train on cached
/// features.
pub fn optimize(model: &mut Model, data: &LabeledDataset, cfg: &PhaseConfig) -> Result<PhaseOutcome, Error> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let start = Instant::now();
    let mut notes = Vec::new();
    if model.decoder.kind != cfg.decoder {
        if cfg.phase.trains_decoder() {
            model.reinit_decoder(cfg.decoder, cfg.seed.wrapping_add(17));
        } else if cfg.phase.uses_frr() {
            notes.push(format!(
                "{}: decoder is frozen and stays {:?} (config asked for {:?})",
                cfg.phase, model.decoder.kind, cfg.decoder
            ));
        }
    }
    notes.extend(model.set_phase_partition(cfg.phase).notes);
    let before: Vec<u64> = GROUPS.iter().map(|&g| model.group_checksum(g)).collect();
    let cached = if cfg.phase.is_linear_only() {
        Some(model.extract_features(&data.inputs, EVAL_CHUNK)?)
    } else {
        None
    };
    let keys = model.keys();
    let mut adam = Adam::new(AdamConfig::new(cfg.learning_rate));
    let mut batches = Batches::new(data.len(), cfg.batch_size, cfg.seed);
    let mut trace = Vec::with_capacity(cfg.steps);
    let mut last = (f64::NAN, f64::NAN, None);
    for step in 0..cfg.steps {
        let idx = batches.next_batch();
        let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
        let mut g = Graph::new();
        let out = match &cached {
            Some(f) => model.forward_from_features(&mut g, &f.select_rows(&idx))?,
            None => model.forward(&mut g, &data.inputs.select_rows(&idx))?,
        };
        let loss = phase_loss(&mut g, &out, &labels, cfg.phase, cfg.weights, cfg.norm)?;
        let value = g.value(loss.total).item();
        if !value.is_finite() {
            return Err(Error::NonFinite {
                step,
                last_finite: trace.last().copied().unwrap_or(f64::NAN),
            });
        }
        trace.push(value);
        last = (
            value,
            g.value(loss.ce).item(),
            loss.regularizer.map(|r| g.value(r).item()),
        );
        let grads = g.gradients(loss.total)?;
        adam.tick();
        for &(key, node) in &out.bindings {
            if !model.param(key).trainable {
                continue;
            }
            let Some(grad) = grads.get(&node) else { continue };
            let slot = keys.iter().position(|k| *k == key).expect("binding keys come from the model");
            adam.update(slot, model.param_mut(key).value.data_mut(), grad.data());
        }
    }
    let audits: Vec<FreezeAudit> = GROUPS
        .iter()
        .zip(before)
        .map(|(&group, before)| FreezeAudit {
            group,
            trained: group_trained(cfg.phase, group),
            before,
            after: model.group_checksum(group),
        })
        .collect();
    if let Some(a) = audits.iter().find(|a| !a.ok()) {
        return Err(Error::InvalidInput(format!("{}: frozen group {:?} changed", cfg.phase, a.group)));
    }
    Ok(PhaseOutcome {
        phase: cfg.phase,
        steps: cfg.steps,
        final_loss: last.0,
        final_ce: last.1,
        final_regularizer: last.2,
        loss_trace: trace,
        audits,
        notes,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Class predictions: sign of the single logit when `k == 1`, argmax otherwise.
pub fn predict(logits: &Tensor) -> Vec<usize> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            if row.len() == 1 {
                usize::from(row[0] > 0.0)
            } else {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |(bi, bv), (j, &v)| if v > bv { (j, v) } else { (bi, bv) })
                    .0
            }
        })
        .collect()
}

/// Percentage of labels matched.
pub fn accuracy_of(pred: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    100.0 * pred.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64
}

pub fn accuracy(model: &Model, ds: &LabeledDataset) -> Result<f64, Error> {
    let f = model.extract_features(&ds.inputs, EVAL_CHUNK)?;
    Ok(accuracy_of(&predict(&model.logits_from_features(&f)), &ds.labels))
}

/// Scalar decision margin per sample: the logit for `k == 1`, otherwise the
/// true-class logit minus the best other logit.
pub fn margins(logits: &Tensor, labels: &[usize]) -> Vec<f64> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            if row.len() == 1 {
                return row[0];
            }
            let y = labels[i];
            let other = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != y)
                .map(|(_, &v)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            row[y] - other
        })
        .collect()
}

/// Fits a linear decoder by ridge least squares on frozen features, so a
/// fixed-linear finetune can start from a model whose decoder was never
/// trained.
pub fn fit_linear_decoder(model: &mut Model, data: &LabeledDataset, ridge: f64) -> Result<(), Error> {
    let f = model.extract_features(&data.inputs, EVAL_CHUNK)?;
    let z = model.logits_from_features(&f);
    let (n, m, k) = (f.rows(), f.row_len(), z.row_len());
    let mut a = vec![0.0; k * k];
    crate::grad::gemm(k, n, k, z.data(), true, z.data(), false, &mut a, 0.0);
    let mut rhs = vec![0.0; k * m];
    crate::grad::gemm(k, n, m, z.data(), true, f.data(), false, &mut rhs, 0.0);
    let scale = (0..k).map(|i| a[i * k + i]).fold(0.0, f64::max).max(1e-12);
    for i in 0..k {
        a[i * k + i] += ridge * scale;
    }
    let sol = solve_spd(&mut a, &mut rhs, k, m)
        .ok_or_else(|| Error::InvalidInput("logit Gram matrix is singular".into()))?;
    // sol is phi^T (k, m); the decoder stores phi (m, k).
    let mut phi = vec![0.0; m * k];
    for r in 0..k {
        for c in 0..m {
            phi[c * k + r] = sol[r * m + c];
        }
    }
    model.reinit_decoder(DecoderKind::Linear, 0);
    model.decoder.params[0].value = Tensor::from_vec(&[m, k], phi);
    Ok(())
}

/// Gaussian elimination with partial pivoting for `A X = B`, `B (k, cols)`.
fn solve_spd(a: &mut [f64], b: &mut [f64], k: usize, cols: usize) -> Option<Vec<f64>> {
    for col in 0..k {
        let piv = (col..k).max_by(|&i, &j| a[i * k + col].abs().total_cmp(&a[j * k + col].abs()))?;
        if a[piv * k + col].abs() < 1e-300 {
            return None;
        }
        if piv != col {
            for c in 0..k {
                a.swap(piv * k + c, col * k + c);
            }
            for c in 0..cols {
                b.swap(piv * cols + c, col * cols + c);
            }
        }
        for r in col + 1..k {
            let f = a[r * k + col] / a[col * k + col];
            if f == 0.0 {
                continue;
            }
            for c in col..k {
                a[r * k + c] -= f * a[col * k + c];
            }
            for c in 0..cols {
                b[r * cols + c] -= f * b[col * cols + c];
            }
        }
    }
    let mut x = vec![0.0; k * cols];
    for r in (0..k).rev() {
        for c in 0..cols {
            let mut s = b[r * cols + c];
            for q in r + 1..k {
                s -= a[r * k + q] * x[q * cols + c];
            }
            x[r * cols + c] = s / a[r * k + r];
        }
    }
    Some(x)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub id: String,
    pub phases: Vec<Phase>,
    pub outcomes: Vec<PhaseOutcome>,
    /// Evaluation name to accuracy in percent.
    pub accuracy: BTreeMap<String, f64>,
    pub checkpoints: Vec<PathBuf>,
    pub notes: Vec<String>,
    pub seconds: f64,
}

impl RunRecord {
    pub fn new(id: &str) -> Self {
        Self {
            id: id.to_string(),
            phases: Vec::new(),
            outcomes: Vec::new(),
            accuracy: BTreeMap::new(),
            checkpoints: Vec::new(),
            notes: Vec::new(),
            seconds: 0.0,
        }
    }

    pub fn push_outcome(&mut self, o: PhaseOutcome) {
        self.phases.push(o.phase);
        self.notes.extend(o.notes.iter().cloned());
        self.outcomes.push(o);
    }

    pub fn evaluate(&mut self, model: &Model, evals: &[(&str, &LabeledDataset)]) -> Result<(), Error> {
        for (name, ds) in evals {
            self.accuracy.insert((*name).to_string(), accuracy(model, ds)?);
        }
        Ok(())
    }

    /// The full trace makes these large; callers that only need the table
    /// can drop it first.
    pub fn to_json(&self) -> Result<String, Error> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Phase configurations for the three-step procedure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Algorithm1 {
    pub erm: PhaseConfig,
    pub linear: PhaseConfig,
    pub finetune: PhaseConfig,
}

impl Algorithm1 {
    fn validate(&self) -> Result<(), Error> {
        let expect = [(Phase::Erm, &self.erm), (Phase::FrrL, &self.linear), (Phase::FrrFlft, &self.finetune)];
        for (want, cfg) in expect {
            if cfg.phase != want {
                return Err(Error::InvalidSpec(format!("expected a {want} phase, found {}", cfg.phase)));
            }
            cfg.validate()?;
        }
        Ok(())
    }
}

/// Standard training, then head and decoder under the reconstruction
/// penalty with the extractor frozen, then the extractor with head and
/// decoder frozen. The head is re-initialized before the second phase.
/// Checkpoints are written to `out_dir` after every phase when given.
pub fn run_algorithm1(
    mut model: Model,
    cfg: &Algorithm1,
    train: &LabeledDataset,
    evals: &[(&str, &LabeledDataset)],
    out_dir: Option<&Path>,
) -> Result<(Model, RunRecord), Error> {
    cfg.validate()?;
    let start = Instant::now();
    let mut record = RunRecord::new("algorithm1");
    let names = ["erm", "frr_l", "frr_flft"];
    for (i, phase_cfg) in [&cfg.erm, &cfg.linear, &cfg.finetune].into_iter().enumerate() {
        if i == 1 {
            model.reinit_head(phase_cfg.seed.wrapping_add(101));
        }
        let outcome = optimize(&mut model, train, phase_cfg)?;
        record.push_outcome(outcome);
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir)?;
            let path = dir.join(format!("{}.ckpt", names[i]));
            let prov: Vec<String> = record.phases.iter().map(|p| p.to_string()).collect();
            save_model(&path, &model, &prov)?;
            record.checkpoints.push(path);
        }
    }
    record.evaluate(&model, evals)?;
    record.seconds = start.elapsed().as_secs_f64();
    Ok((model, record))
}
