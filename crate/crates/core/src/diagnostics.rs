//! Feature taxonomy: which penultimate features track the simple factor,
//! which track the complex one, and how strongly the output leans on each.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::grad::Tensor;
use crate::svg;
use crate::Error;

pub const DEFAULT_THRESHOLD: f64 = 0.9;

fn centered(values: impl Iterator<Item = f64>, n: usize) -> (Vec<f64>, f64) {
    let v: Vec<f64> = values.collect();
    let mean = v.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = v.iter().map(|x| x - mean).collect();
    let ss = c.iter().map(|x| x * x).sum::<f64>();
    (c, ss.sqrt())
}

fn column(features: &Tensor, j: usize) -> impl Iterator<Item = f64> + '_ {
    let m = features.row_len();
    features.data().iter().skip(j).step_by(m).copied()
}

fn check_matrix(features: &Tensor) -> Result<(usize, usize), Error> {
    if features.rank() != 2 {
        return Err(Error::InvalidInput(format!("features must be (n, m), got {:?}", features.shape())));
    }
    let n = features.rows();
    if n < 3 {
        return Err(Error::InvalidInput(format!("need at least 3 samples, got {n}")));
    }
    Ok((n, features.row_len()))
}

/// Pearson correlation of a centered pair; zero if either side is constant.
fn pearson(a: &(Vec<f64>, f64), b: &(Vec<f64>, f64)) -> f64 {
    if a.1 == 0.0 || b.1 == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    (dot / (a.1 * b.1)).clamp(-1.0, 1.0)
}

/// Per-column Pearson correlation with `factor`. Constant columns give 0.
pub fn feature_factor_correlation(features: &Tensor, factor: &[f64]) -> Result<Vec<f64>, Error> {
    let (n, m) = check_matrix(features)?;
    if factor.len() != n {
        return Err(Error::InvalidInput(format!("{n} feature rows but {} factor values", factor.len())));
    }
    let f = centered(factor.iter().copied(), n);
    if f.1 == 0.0 {
        return Err(Error::InvalidInput("factor is constant; correlation undefined".into()));
    }
    Ok((0..m).map(|j| pearson(&centered(column(features, j), n), &f)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureClass {
    Simple,
    Complex,
    Unclassified,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub class: FeatureClass,
    pub corr_simple: f64,
    pub corr_complex: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub simple: usize,
    pub complex: usize,
    pub unclassified: usize,
}

/// Mean |correlation| of the output margin with each group; `None` when the
/// group is empty.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OutputCorrelation {
    pub simple: Option<f64>,
    pub complex: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureTaxonomy {
    pub features: Vec<FeatureRecord>,
    pub counts: Counts,
    pub threshold: f64,
    pub output_corr: Option<OutputCorrelation>,
}

/// Features measured on a set where the *other* factor is randomized.
#[derive(Clone, Copy, Debug)]
pub struct FactorProbe<'a> {
    pub features: &'a Tensor,
    pub factor: &'a [f64],
}

/// Labels each feature by which factor it tracks above `threshold` (in
/// absolute correlation). Crossing on both goes to the larger; exact ties
/// stay unclassified.
pub fn classify_features(simple: FactorProbe<'_>, complex: FactorProbe<'_>, threshold: f64) -> Result<FeatureTaxonomy, Error> {
    let cs = feature_factor_correlation(simple.features, simple.factor)?;
    let cc = feature_factor_correlation(complex.features, complex.factor)?;
    if cs.len() != cc.len() {
        return Err(Error::InvalidInput(format!(
            "probe feature widths differ: {} vs {}",
            cs.len(),
            cc.len()
        )));
    }
    let mut counts = Counts::default();
    let features = cs
        .into_iter()
        .zip(cc)
        .map(|(s, c)| {
            let (a, b) = (s.abs(), c.abs());
            let class = match (a > threshold, b > threshold) {
                (true, false) => FeatureClass::Simple,
                (false, true) => FeatureClass::Complex,
                (true, true) if a > b => FeatureClass::Simple,
                (true, true) if b > a => FeatureClass::Complex,
                _ => FeatureClass::Unclassified,
            };
            match class {
                FeatureClass::Simple => counts.simple += 1,
                FeatureClass::Complex => counts.complex += 1,
                FeatureClass::Unclassified => counts.unclassified += 1,
            }
            FeatureRecord { class, corr_simple: s, corr_complex: c }
        })
        .collect();
    Ok(FeatureTaxonomy { features, counts, threshold, output_corr: None })
}

pub fn output_correlation(margin: &[f64], taxonomy: &FeatureTaxonomy, features: &Tensor) -> Result<OutputCorrelation, Error> {
    let (n, m) = check_matrix(features)?;
    if margin.len() != n || taxonomy.features.len() != m {
        return Err(Error::InvalidInput(format!(
            "margin has {} entries, features are {n}x{m}, taxonomy covers {}",
            margin.len(),
            taxonomy.features.len()
        )));
    }
    let mc = centered(margin.iter().copied(), n);
    let group = |cls: FeatureClass| {
        let vals: Vec<f64> = (0..m)
            .filter(|&j| taxonomy.features[j].class == cls)
            .map(|j| pearson(&centered(column(features, j), n), &mc).abs())
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    Ok(OutputCorrelation {
        simple: group(FeatureClass::Simple),
        complex: group(FeatureClass::Complex),
    })
}

/// Symmetric `m x m` Pearson matrix with unit diagonal; constant columns
/// correlate 0 with everything else.
pub fn inter_feature_correlation(features: &Tensor) -> Result<Tensor, Error> {
    let (n, m) = check_matrix(features)?;
    let cols: Vec<_> = (0..m).map(|j| centered(column(features, j), n)).collect();
    let mut out = Tensor::zeros(&[m, m]);
    let data = out.data_mut();
    for i in 0..m {
        data[i * m + i] = 1.0;
        for j in i + 1..m {
            let r = pearson(&cols[i], &cols[j]);
            data[i * m + j] = r;
            data[j * m + i] = r;
        }
    }
    Ok(out)
}

pub fn taxonomy_csv(t: &FeatureTaxonomy) -> String {
    let mut s = String::from("feature,class,corr_simple,corr_complex\n");
    for (j, f) in t.features.iter().enumerate() {
        let class = match f.class {
            FeatureClass::Simple => "simple",
            FeatureClass::Complex => "complex",
            FeatureClass::Unclassified => "unclassified",
        };
        let _ = writeln!(s, "{j},{class},{:.6},{:.6}", f.corr_simple, f.corr_complex);
    }
    s
}

pub fn matrix_csv(m: &Tensor) -> String {
    let mut s = String::new();
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:.6}")).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

/// Heatmap of the correlation matrix, features ordered simple, complex,
/// unclassified so replication blocks line up.
pub fn correlation_heatmap(title: &str, corr: &Tensor, taxonomy: Option<&FeatureTaxonomy>) -> String {
    let m = corr.rows();
    let mut order: Vec<usize> = (0..m).collect();
    if let Some(t) = taxonomy {
        order.sort_by_key(|&j| t.features.get(j).map_or(2, |f| f.class as u8));
    }
    let values: Vec<f64> = order
        .iter()
        .flat_map(|&i| order.iter().map(move |&j| corr.row(i)[j]))
        .collect();
    svg::heatmap(title, m, &values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_constant_columns() {
        let f = Tensor::matrix(4, 2, vec![1.0, 5.0, 2.0, 5.0, 3.0, 5.0, 4.0, 5.0]);
        let r = feature_factor_correlation(&f, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((r[0] - 1.0).abs() < 1e-12);
        assert_eq!(r[1], 0.0);
        assert!(feature_factor_correlation(&f, &[1.0; 4]).is_err());
    }

    #[test]
    fn ties_are_unclassified() {
        let f = Tensor::matrix(3, 1, vec![0.0, 1.0, 2.0]);
        let probe = FactorProbe { features: &f, factor: &[0.0, 1.0, 2.0] };
        let t = classify_features(probe, probe, 0.9).unwrap();
        assert_eq!(t.counts, Counts { simple: 0, complex: 0, unclassified: 1 });
    }

    #[test]
    fn empty_group_is_absent() {
        let f = Tensor::matrix(3, 1, vec![0.0, 1.0, 2.0]);
        let probe = FactorProbe { features: &f, factor: &[0.0, 1.0, 2.0] };
        let other = FactorProbe { features: &f, factor: &[1.0, 0.0, 1.0] };
        let t = classify_features(probe, other, 0.9).unwrap();
        let oc = output_correlation(&[0.0, 1.0, 2.0], &t, &f).unwrap();
        assert_eq!(oc.complex, None);
        assert!((oc.simple.unwrap() - 1.0).abs() < 1e-12);
    }
}
