//! Two-branch concatenation dataset and its evaluation variants.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FactorRecord, LabeledDataset, SimpleFactor};
use crate::grad::Tensor;
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Simple,
    Complex,
}

impl std::str::FromStr for Branch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "simple" => Ok(Branch::Simple),
            "complex" => Ok(Branch::Complex),
            other => Err(Error::InvalidInput(format!("unknown branch `{other}` (simple, complex)"))),
        }
    }
}

/// Channel split of a concatenated `(n, simple + complex, h, w)` input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConcatLayout {
    pub simple_channels: usize,
    pub complex_channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ConcatLayout {
    fn plane(&self) -> usize {
        self.height * self.width
    }

    /// Offset and length of a branch within one flattened sample.
    pub fn span(&self, branch: Branch) -> (usize, usize) {
        match branch {
            Branch::Simple => (0, self.simple_channels * self.plane()),
            Branch::Complex => (self.simple_channels * self.plane(), self.complex_channels * self.plane()),
        }
    }

    fn check(&self, ds: &LabeledDataset) -> Result<(), Error> {
        let want = [self.simple_channels + self.complex_channels, self.height, self.width];
        if ds.inputs.shape().get(1..) != Some(&want[..]) {
            return Err(Error::InvalidInput(format!(
                "dataset shape {:?} does not match layout {:?}",
                ds.inputs.shape(),
                self
            )));
        }
        Ok(())
    }
}

fn image_shape(ds: &LabeledDataset) -> Result<[usize; 3], Error> {
    match *ds.inputs.shape() {
        [_, c, h, w] => Ok([c, h, w]),
        ref s => Err(Error::InvalidInput(format!("expected (n, c, h, w) images, got {s:?}"))),
    }
}

/// Pairs every complex-source image with a random simple-source image of the
/// same class. Returns the dataset and the channel layout.
pub fn make_concat_dataset(
    simple: &LabeledDataset,
    complex: &LabeledDataset,
    seed: u64,
) -> Result<(LabeledDataset, ConcatLayout), Error> {
    if simple.classes != complex.classes {
        return Err(Error::InvalidInput(format!(
            "class vocabularies differ: {} vs {}",
            simple.classes, complex.classes
        )));
    }
    let [cs, h, w] = image_shape(simple)?;
    let [cc, h2, w2] = image_shape(complex)?;
    if (h, w) != (h2, w2) {
        return Err(Error::InvalidInput(format!("spatial sizes differ: {h}x{w} vs {h2}x{w2}")));
    }
    let mut pools = vec![Vec::new(); simple.classes];
    for (i, &l) in simple.labels.iter().enumerate() {
        pools[l].push(i);
    }
    if let Some(k) = (0..complex.classes).find(|&k| pools[k].is_empty() && complex.labels.contains(&k)) {
        return Err(Error::InvalidInput(format!("simple source has no samples of class {k}")));
    }
    let layout = ConcatLayout { simple_channels: cs, complex_channels: cc, height: h, width: w };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(complex.len() * (cs + cc) * h * w);
    let mut factors = Vec::with_capacity(complex.len());
    for (ci, &k) in complex.labels.iter().enumerate() {
        let si = pools[k][rng.random_range(0..pools[k].len())];
        data.extend_from_slice(simple.inputs.row(si));
        data.extend_from_slice(complex.inputs.row(ci));
        factors.push(FactorRecord { simple: SimpleFactor::Class(k), complex: k, sources: Some([si, ci]) });
    }
    let ds = LabeledDataset::new(
        Tensor::from_vec(&[complex.len(), cs + cc, h, w], data),
        complex.labels.clone(),
        complex.classes,
        Some(factors),
    )?;
    Ok((ds, layout))
}

/// Replaces one branch of every sample by the mean of that branch over
/// `reference` (input-space averaging).
pub fn make_avg_substitution(
    ds: &LabeledDataset,
    layout: ConcatLayout,
    branch: Branch,
    reference: &LabeledDataset,
) -> Result<LabeledDataset, Error> {
    layout.check(ds)?;
    layout.check(reference)?;
    if reference.is_empty() {
        return Err(Error::InvalidInput("empty reference set for averaging".into()));
    }
    let (off, len) = layout.span(branch);
    let mut mean = vec![0.0; len];
    for i in 0..reference.len() {
        for (m, v) in mean.iter_mut().zip(&reference.inputs.row(i)[off..off + len]) {
            *m += v;
        }
    }
    let n_ref = reference.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n_ref);
    let mut out = ds.clone();
    let row = out.inputs.row_len();
    for chunk in out.inputs.data_mut().chunks_mut(row) {
        chunk[off..off + len].copy_from_slice(&mean);
    }
    Ok(out)
}

/// Feature-space variant: overwrites the branch's feature columns (`0..m_simple`
/// or `m_simple..`) with their mean over `reference`.
pub fn make_avg_substitution_features(
    features: &Tensor,
    m_simple: usize,
    branch: Branch,
    reference: &Tensor,
) -> Result<Tensor, Error> {
    let m = features.row_len();
    if reference.row_len() != m || m_simple > m {
        return Err(Error::InvalidInput(format!(
            "feature widths disagree: {m} vs {} (simple block {m_simple})",
            reference.row_len()
        )));
    }
    if reference.rows() == 0 {
        return Err(Error::InvalidInput("empty reference set for averaging".into()));
    }
    let cols = match branch {
        Branch::Simple => 0..m_simple,
        Branch::Complex => m_simple..m,
    };
    let mut mean = vec![0.0; m];
    for i in 0..reference.rows() {
        for c in cols.clone() {
            mean[c] += reference.row(i)[c] / reference.rows() as f64;
        }
    }
    let mut out = features.clone();
    for chunk in out.data_mut().chunks_mut(m) {
        for c in cols.clone() {
            chunk[c] = mean[c];
        }
    }
    Ok(out)
}

/// Permutes one branch across samples with a seeded non-identity
/// permutation; labels stay with the other branch.
pub fn make_rand_shuffle(ds: &LabeledDataset, layout: ConcatLayout, branch: Branch, seed: u64) -> Result<LabeledDataset, Error> {
    layout.check(ds)?;
    let n = ds.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    if n > 1 {
        loop {
            perm.shuffle(&mut rng);
            if perm.iter().enumerate().any(|(i, &p)| i != p) {
                break;
            }
        }
    }
    let (off, len) = layout.span(branch);
    let mut out = ds.clone();
    let row = out.inputs.row_len();
    let src = ds.inputs.data();
    for (i, chunk) in out.inputs.data_mut().chunks_mut(row).enumerate() {
        let j = perm[i];
        chunk[off..off + len].copy_from_slice(&src[j * row + off..j * row + off + len]);
    }
    if let (Some(out_f), Some(in_f)) = (out.factors.as_mut(), ds.factors.as_ref()) {
        for (i, f) in out_f.iter_mut().enumerate() {
            let g = in_f[perm[i]];
            match branch {
                Branch::Simple => {
                    f.simple = g.simple;
                    if let (Some(s), Some(gs)) = (f.sources.as_mut(), g.sources) {
                        s[0] = gs[0];
                    }
                }
                Branch::Complex => {
                    f.complex = g.complex;
                    if let (Some(s), Some(gs)) = (f.sources.as_mut(), g.sources) {
                        s[1] = gs[1];
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_source(channels: usize, classes: usize, per: usize, base: f64) -> LabeledDataset {
        let n = classes * per;
        let labels: Vec<usize> = (0..n).map(|i| i / per).collect();
        let data = (0..n * channels * 4).map(|j| base + (j / (channels * 4)) as f64).collect();
        LabeledDataset::new(Tensor::from_vec(&[n, channels, 2, 2], data), labels, classes, None).unwrap()
    }

    #[test]
    fn two_element_shuffle_is_a_swap() {
        let (ds, layout) = make_concat_dataset(&toy_source(1, 2, 1, 0.0), &toy_source(3, 2, 1, 100.0), 0).unwrap();
        let sh = make_rand_shuffle(&ds, layout, Branch::Complex, 0).unwrap();
        assert_eq!(sh.inputs.row(0)[4..], ds.inputs.row(1)[4..]);
        assert_eq!(sh.inputs.row(0)[..4], ds.inputs.row(0)[..4]);
    }

    #[test]
    fn mismatched_vocabularies_rejected() {
        assert!(make_concat_dataset(&toy_source(1, 2, 1, 0.0), &toy_source(3, 3, 1, 0.0), 0).is_err());
    }
}
