use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::LabeledDataset;
use crate::grad::Tensor;
use crate::Error;

/// `x = y * mean + noise`, noise uniform on `[-h, h]^2`, classes balanced.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyDistribution {
    /// Means for label +1 and label -1.
    pub class_means: [[f64; 2]; 2],
    pub noise_halfwidth: f64,
    pub label_prob: f64,
}

impl Default for ToyDistribution {
    fn default() -> Self {
        Self {
            class_means: [[1.0, 1.0], [-1.0, -1.0]],
            noise_halfwidth: 0.5,
            label_prob: 0.5,
        }
    }
}

impl ToyDistribution {
    /// Shifted-domain variant with means `(1, 0)` and `(-1, 0)`.
    pub fn ood() -> Self {
        Self {
            class_means: [[1.0, 0.0], [-1.0, 0.0]],
            ..Self::default()
        }
    }
}

/// Samples `n` points per class; label 1 is `y = +1`, label 0 is `y = -1`.
///
/// With `include_corners`, the points `y (0.5, 0.5)` and `y (1.5, 1.5)` are
/// appended for both labels, so the empirical hard-margin problem has the
/// same binding constraint as the population one.
pub fn sample_toy(dist: &ToyDistribution, n: usize, seed: u64, include_corners: bool) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = dist.noise_halfwidth;
    let mut data = Vec::with_capacity(4 * n + 8);
    let mut labels = Vec::with_capacity(2 * n + 4);
    for _ in 0..n {
        for (label, mean) in [(1usize, dist.class_means[0]), (0, dist.class_means[1])] {
            data.push(mean[0] + rng.random_range(-h..=h));
            data.push(mean[1] + rng.random_range(-h..=h));
            labels.push(label);
        }
    }
    if include_corners {
        for (label, mean) in [(1usize, dist.class_means[0]), (0, dist.class_means[1])] {
            for shrink in [-h, h] {
                let s = mean[0].signum();
                data.push(mean[0] + s * shrink);
                data.push(mean[1] + mean[1].signum() * shrink);
                labels.push(label);
            }
        }
    }
    let rows = labels.len();
    LabeledDataset::new(Tensor::from_vec(&[rows, 2], data), labels, 2, None).expect("consistent toy set")
}

/// Samples from [`ToyDistribution::ood`].
pub fn sample_toy_ood(n: usize, seed: u64) -> LabeledDataset {
    sample_toy(&ToyDistribution::ood(), n, seed, false)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    First,
    Second,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::First => "first",
            Axis::Second => "second",
        })
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "first" => Ok(Axis::First),
            "second" => Ok(Axis::Second),
            _ => Err(Error::InvalidSpec(format!("axis must be `first` or `second`, got `{s}`"))),
        }
    }
}

/// Repeats one input coordinate `d` times; `d = 0` and `d = 1` leave the
/// input unchanged.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicationMap {
    pub d: usize,
    pub axis: Axis,
}

impl ReplicationMap {
    pub fn new(d: usize, axis: Axis) -> Self {
        Self { d, axis }
    }

    /// Copies of the replicated coordinate.
    pub fn copies(&self) -> usize {
        self.d.max(1)
    }

    pub fn output_dim(&self) -> usize {
        self.copies() + 1
    }

    pub fn apply(&self, x: [f64; 2]) -> Vec<f64> {
        let c = self.copies();
        let mut out = Vec::with_capacity(c + 1);
        match self.axis {
            Axis::First => {
                out.extend(std::iter::repeat_n(x[0], c));
                out.push(x[1]);
            }
            Axis::Second => {
                out.push(x[0]);
                out.extend(std::iter::repeat_n(x[1], c));
            }
        }
        out
    }

    /// Is coordinate `i` of the output one of the replicated copies?
    pub fn in_group(&self, i: usize) -> bool {
        match self.axis {
            Axis::First => i < self.copies(),
            Axis::Second => i >= 1,
        }
    }
}

pub fn replicate(dataset: &LabeledDataset, map: ReplicationMap) -> Result<LabeledDataset, Error> {
    if dataset.inputs.rank() != 2 || dataset.inputs.shape()[1] != 2 {
        return Err(Error::InvalidInput(format!(
            "replication needs 2-D inputs, got shape {:?}",
            dataset.inputs.shape()
        )));
    }
    let n = dataset.len();
    let mut data = Vec::with_capacity(n * map.output_dim());
    for i in 0..n {
        let r = dataset.inputs.row(i);
        data.extend(map.apply([r[0], r[1]]));
    }
    Ok(LabeledDataset {
        inputs: Tensor::from_vec(&[n, map.output_dim()], data),
        ..dataset.clone()
    })
}

/// Collapses a classifier on replicated inputs back to the original plane:
/// the replicated group's weights are summed into one coordinate.
pub fn projected_classifier(w_tilde: &[f64], map: ReplicationMap) -> Result<[f64; 2], Error> {
    if w_tilde.len() != map.output_dim() {
        return Err(Error::InvalidInput(format!(
            "classifier has {} weights, map produces {}",
            w_tilde.len(),
            map.output_dim()
        )));
    }
    let group: f64 = (0..w_tilde.len()).filter(|&i| map.in_group(i)).map(|i| w_tilde[i]).sum();
    Ok(match map.axis {
        Axis::First => [group, w_tilde[w_tilde.len() - 1]],
        Axis::Second => [w_tilde[0], group],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corners_are_appended() {
        let ds = sample_toy(&ToyDistribution::default(), 3, 0, true);
        assert_eq!(ds.len(), 10);
        let has = |x: [f64; 2], l: usize| (0..ds.len()).any(|i| ds.inputs.row(i) == x && ds.labels[i] == l);
        assert!(has([0.5, 0.5], 1) && has([1.5, 1.5], 1));
        assert!(has([-0.5, -0.5], 0) && has([-1.5, -1.5], 0));
    }

    #[test]
    fn layouts() {
        let m = ReplicationMap::new(3, Axis::First);
        assert_eq!(m.apply([0.3, -0.2]), vec![0.3, 0.3, 0.3, -0.2]);
        assert_eq!(ReplicationMap::new(2, Axis::Second).apply([1.0, 2.0]), vec![1.0, 2.0, 2.0]);
        assert_eq!(ReplicationMap::new(0, Axis::First).apply([1.0, 2.0]), vec![1.0, 2.0]);
    }

    #[test]
    fn projection_at_d5() {
        let m = ReplicationMap::new(5, Axis::First);
        let p = projected_classifier(&[1.0 / 3.0; 6], m).unwrap();
        assert!((p[0] - 5.0 / 3.0).abs() < 1e-12 && (p[1] - 1.0 / 3.0).abs() < 1e-12);
        assert!(projected_classifier(&[1.0; 5], m).is_err());
    }

    #[test]
    fn ood_set_is_empty_at_zero() {
        assert!(sample_toy_ood(0, 1).is_empty());
    }
}
