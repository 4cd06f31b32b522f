//! Seeded random search over learning rate, regularizer weight and norm.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{accuracy, optimize, PhaseConfig};
use crate::datasets::LabeledDataset;
use crate::nets::Model;
use crate::objectives::NormVariant;
use crate::phase::Phase;
use crate::Error;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub learning_rate: (f64, f64),
    pub lambda: (f64, f64),
    pub norms: Vec<NormVariant>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            learning_rate: (1e-5, 1e-1),
            lambda: (1e-6, 1.0),
            norms: NormVariant::ALL.to_vec(),
        }
    }
}

pub fn sample_loguniform(rng: &mut impl Rng, low: f64, high: f64) -> f64 {
    let (a, b) = (low.ln(), high.ln());
    (a + (b - a) * rng.random::<f64>()).exp()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub config: PhaseConfig,
    pub validation_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub best: PhaseConfig,
    pub best_index: usize,
    pub trials: Vec<Trial>,
}

/// Draws `trials` configurations around `base`, scores each with `score`
/// (higher is better) and keeps the best; ties go to the smaller active
/// regularizer weight, then to the earlier trial.
pub fn sweep(
    base: &PhaseConfig,
    space: &SearchSpace,
    trials: usize,
    seed: u64,
    mut score: impl FnMut(&PhaseConfig) -> Result<f64, Error>,
) -> Result<SweepResult, Error> {
    if trials == 0 {
        return Err(Error::InvalidInput("sweep needs at least one trial".into()));
    }
    if space.norms.is_empty() {
        return Err(Error::InvalidInput("search space has no norm variants".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(trials);
    for index in 0..trials {
        let mut cfg = base.clone();
        cfg.learning_rate = sample_loguniform(&mut rng, space.learning_rate.0, space.learning_rate.1);
        let lambda = sample_loguniform(&mut rng, space.lambda.0, space.lambda.1);
        match cfg.phase {
            Phase::FrrL | Phase::FullRankL => cfg.weights.lambda_L = lambda,
            Phase::FrrFt | Phase::FrrFlft => cfg.weights.lambda_FLFT = lambda,
            _ => {}
        }
        cfg.norm = space.norms[rng.random_range(0..space.norms.len())];
        let validation_accuracy = score(&cfg)?;
        out.push(Trial { index, config: cfg, validation_accuracy });
    }
    let best = out
        .iter()
        .min_by(|a, b| {
            b.validation_accuracy
                .total_cmp(&a.validation_accuracy)
                .then(a.config.active_lambda().total_cmp(&b.config.active_lambda()))
                .then(a.index.cmp(&b.index))
        })
        .expect("at least one trial");
    Ok(SweepResult { best: best.config.clone(), best_index: best.index, trials: out })
}

/// Sweeps one phase starting from `model`, selecting on in-distribution
/// accuracy over `selection`.
pub fn sweep_phase(
    model: &Model,
    train: &LabeledDataset,
    selection: &LabeledDataset,
    base: &PhaseConfig,
    space: &SearchSpace,
    trials: usize,
    seed: u64,
) -> Result<SweepResult, Error> {
    if selection.is_empty() {
        return Err(Error::InvalidInput("empty selection set".into()));
    }
    sweep(base, space, trials, seed, |cfg| {
        let mut m = model.clone();
        optimize(&mut m, train, cfg)?;
        accuracy(&m, selection)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_trial_is_returned() {
        let base = PhaseConfig::new(Phase::FrrL, 1, 1e-3);
        let r = sweep(&base, &SearchSpace::default(), 1, 3, |_| Ok(50.0)).unwrap();
        assert_eq!(r.trials.len(), 1);
        assert_eq!(r.best, r.trials[0].config);
    }

    #[test]
    fn ties_prefer_smaller_lambda() {
        let base = PhaseConfig::new(Phase::FrrL, 1, 1e-3);
        let r = sweep(&base, &SearchSpace::default(), 8, 5, |_| Ok(70.0)).unwrap();
        let min = r.trials.iter().map(|t| t.config.weights.lambda_L).fold(f64::INFINITY, f64::min);
        assert_eq!(r.best.weights.lambda_L, min);
    }

    #[test]
    fn zero_trials_rejected() {
        let base = PhaseConfig::new(Phase::Erm, 1, 1e-3);
        assert!(sweep(&base, &SearchSpace::default(), 0, 0, |_| Ok(0.0)).is_err());
    }
}
