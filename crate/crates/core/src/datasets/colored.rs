//! Coloured digits: a binary `1` vs `5` task whose background colour is a
//! weakly reliable shortcut at train time and random at test time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FactorRecord, LabeledDataset, SimpleFactor};
use crate::grad::Tensor;
use crate::Error;

/// Integer RGB box; channels are sampled in `[low, high)`, or fixed at
/// `low` when the bounds coincide.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColorRange {
    pub low: [u32; 3],
    pub high: [u32; 3],
}

impl ColorRange {
    pub fn new(low: [u32; 3], high: [u32; 3]) -> Result<Self, Error> {
        if (0..3).any(|c| low[c] > high[c] || high[c] > 256) {
            return Err(Error::InvalidInput(format!("bad colour range {low:?}..{high:?}")));
        }
        Ok(Self { low, high })
    }

    pub fn sample(&self, rng: &mut impl Rng) -> [u32; 3] {
        std::array::from_fn(|c| {
            if self.high[c] > self.low[c] {
                rng.random_range(self.low[c]..self.high[c])
            } else {
                self.low[c]
            }
        })
    }

    pub fn contains(&self, rgb: [u32; 3]) -> bool {
        (0..3).all(|c| {
            if self.high[c] > self.low[c] {
                (self.low[c]..self.high[c]).contains(&rgb[c])
            } else {
                rgb[c] == self.low[c]
            }
        })
    }

    /// Number of distinct integer colours in the box.
    pub fn volume(&self) -> u64 {
        (0..3).map(|c| u64::from((self.high[c] - self.low[c]).max(1))).product()
    }
}

pub const R0: ColorRange = ColorRange { low: [115, 0, 0], high: [256, 141, 0] };
pub const R1: ColorRange = ColorRange { low: [0, 115, 0], high: [141, 256, 0] };
pub const OVERLAP_BAND: ColorRange = ColorRange { low: [115, 115, 0], high: [141, 141, 0] };
const CUBE: ColorRange = ColorRange { low: [0, 0, 0], high: [256, 256, 256] };

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    /// Training colour ranges, but drawn independently of the digit: the
    /// colour still varies as in training while the shape carries no colour
    /// information.
    Decoupled,
}

/// Background pixels (intensity below one half) take the colour; stroke
/// pixels take a tint of it, mixed towards white in proportion to intensity.
fn colorize(gray: &[f64], rgb: [u32; 3], out: &mut Vec<f64>) {
    for &channel in &rgb {
        let c = f64::from(channel) / 255.0;
        out.extend(gray.iter().map(|&v| if v < 0.5 { c } else { c + (1.0 - c) * v }));
    }
}

/// Builds the coloured binary task from a ten-class digit set: digit 1 is
/// class 0 and digit 5 is class 1.
pub fn make_colored_mnist(digits: &LabeledDataset, split: Split, seed: u64) -> Result<LabeledDataset, Error> {
    let shape = digits.inputs.shape();
    if shape.len() != 4 || shape[1] != 1 {
        return Err(Error::InvalidInput(format!("expected (n, 1, h, w) digits, got {shape:?}")));
    }
    let pools: [Vec<usize>; 2] = [1, 5].map(|d| (0..digits.len()).filter(|&i| digits.labels[i] == d).collect());
    for (pool, d) in pools.iter().zip([1, 5]) {
        if pool.is_empty() {
            return Err(Error::InvalidInput(format!("digit class {d} missing from source")));
        }
    }
    let (h, w) = (shape[2], shape[3]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order: Vec<(usize, usize)> = pools
        .iter()
        .enumerate()
        .flat_map(|(c, p)| p.iter().map(move |&i| (c, i)))
        .collect();
    let mut data = Vec::with_capacity(order.len() * 3 * h * w);
    let mut labels = Vec::with_capacity(order.len());
    let mut factors = Vec::with_capacity(order.len());
    for (class, mut src) in order {
        let (rgb, label) = match split {
            Split::Test => (CUBE.sample(&mut rng), class),
            Split::Decoupled => ([R0, R1][usize::from(rng.random_bool(0.5))].sample(&mut rng), class),
            Split::Train => {
                let rgb = [R0, R1][class].sample(&mut rng);
                if OVERLAP_BAND.contains(rgb) {
                    let label = usize::from(rng.random_bool(0.5));
                    if label != class {
                        let pool = &pools[label];
                        src = pool[rng.random_range(0..pool.len())];
                    }
                    (rgb, label)
                } else {
                    (rgb, class)
                }
            }
        };
        colorize(digits.inputs.row(src), rgb, &mut data);
        labels.push(label);
        factors.push(FactorRecord {
            simple: SimpleFactor::Rgb(rgb.map(f64::from)),
            complex: label,
            sources: Some([src, src]),
        });
    }
    let n = labels.len();
    LabeledDataset::new(Tensor::from_vec(&[n, 3, h, w], data), labels, 2, Some(factors))
}
