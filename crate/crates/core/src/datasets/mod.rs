//! Dataset containers, the IDX reader/writer, procedural image sources, the
//! coloured-digit and concatenation datasets, and evaluation variants.

mod colored;
mod concat;
mod idx;
mod procedural;

pub use colored::{make_colored_mnist, ColorRange, Split, OVERLAP_BAND, R0, R1};
pub use concat::{
    make_avg_substitution, make_avg_substitution_features, make_concat_dataset, make_rand_shuffle, Branch,
    ConcatLayout,
};
pub use idx::{load_idx, read_idx_images, read_idx_labels, write_idx};
pub use procedural::{digit_source, texture_source, SourceConfig, DIGIT_NOISE, TEXTURE_NOISE};

use serde::{Deserialize, Serialize};

use crate::checkpoint::Container;
use crate::grad::Tensor;
use crate::Error;

/// Latent value of the simple factor for one sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SimpleFactor {
    /// Background colour, channels in `[0, 256)`.
    Rgb([f64; 3]),
    Class(usize),
}

impl SimpleFactor {
    /// Signed scalar used for correlation: red minus green for colours.
    pub fn scalar(&self) -> f64 {
        match *self {
            SimpleFactor::Rgb([r, g, _]) => (r - g) / 255.0,
            SimpleFactor::Class(c) => c as f64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorRecord {
    pub simple: SimpleFactor,
    /// Shape / digit / texture class of the complex factor.
    pub complex: usize,
    /// Source indices `[simple, complex]` for paired datasets.
    pub sources: Option<[usize; 2]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub factors: Option<Vec<FactorRecord>>,
}

impl LabeledDataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, classes: usize, factors: Option<Vec<FactorRecord>>) -> Result<Self, Error> {
        let n = inputs.rows();
        if labels.len() != n || factors.as_ref().is_some_and(|f| f.len() != n) {
            return Err(Error::InvalidInput(format!(
                "dataset has {n} inputs but {} labels",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidInput(format!("label {bad} outside [0, {classes})")));
        }
        Ok(Self {
            inputs,
            labels,
            classes,
            factors,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            inputs: self.inputs.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            factors: self.factors.as_ref().map(|f| idx.iter().map(|&i| f[i]).collect()),
        }
    }

    /// Seeded split into (train, validation) with `fraction` held out.
    pub fn split_validation(&self, fraction: f64, seed: u64) -> (Self, Self) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let n_val = ((self.len() as f64) * fraction).round() as usize;
        let (val, train) = idx.split_at(n_val.min(self.len()));
        let mut train = train.to_vec();
        let mut val = val.to_vec();
        train.sort_unstable();
        val.sort_unstable();
        (self.subset(&train), self.subset(&val))
    }

    /// Toy-problem labels as `+1 / -1`.
    pub fn signed_labels(&self) -> Vec<f64> {
        self.labels.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect()
    }

    /// Fraction of samples in the most frequent class.
    pub fn majority_rate(&self) -> f64 {
        let mut counts = vec![0usize; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts.into_iter().max().unwrap_or(0) as f64 / self.len().max(1) as f64
    }

    pub fn to_container(&self, meta: serde_json::Value) -> Result<Container, Error> {
        let mut c = Container::new(serde_json::json!({
            "kind": "dataset",
            "classes": self.classes,
            "factors": self.factors,
            "meta": meta,
        }));
        c.push("inputs", self.inputs.clone());
        c.push("labels", Tensor::vector(self.labels.iter().map(|&l| l as f64).collect()));
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self, Error> {
        let missing = |what: &str| Error::InvalidInput(format!("dataset container lacks `{what}`"));
        let inputs = c.get("inputs").ok_or_else(|| missing("inputs"))?.clone();
        let labels = c
            .get("labels")
            .ok_or_else(|| missing("labels"))?
            .data()
            .iter()
            .map(|&v| v as usize)
            .collect();
        let classes = c.meta.get("classes").and_then(|v| v.as_u64()).ok_or_else(|| missing("classes"))? as usize;
        let factors = serde_json::from_value(c.meta.get("factors").cloned().unwrap_or_default())?;
        Self::new(inputs, labels, classes, factors)
    }
}

/// Dataset cache directory: `SBLAB_DATA_DIR` or `./sblab-data`.
pub fn data_dir() -> std::path::PathBuf {
    std::env::var_os("SBLAB_DATA_DIR")
        .map(Into::into)
        .unwrap_or_else(|| std::path::PathBuf::from("sblab-data"))
}
